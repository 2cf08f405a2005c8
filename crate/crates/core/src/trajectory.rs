//! Trajectory storage: fixed-horizon episodes of multi-attribute observations.
//!
//! A dataset holds `L` episodes of exactly `h + 1` steps each. Every step
//! carries one value per schema attribute plus the action taken at that step.
//! Episodes serialize to JSON Lines: the first line is the schema header, each
//! following line is one episode.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for checking that integer-grid components are whole numbers.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeKind {
    Continuous,
    IntegerGrid,
}

/// One observable attribute: a named box-bounded vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub kind: AttributeKind,
}

impl AttributeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::SchemaViolation("attribute name is empty".into()));
        }
        if self.dim == 0 {
            return Err(Error::SchemaViolation(format!(
                "attribute '{}' has dim 0",
                self.name
            )));
        }
        if self.lower.len() != self.dim || self.upper.len() != self.dim {
            return Err(Error::SchemaViolation(format!(
                "attribute '{}' bounds do not match dim {}",
                self.name, self.dim
            )));
        }
        for c in 0..self.dim {
            if !self.lower[c].is_finite() || !self.upper[c].is_finite() {
                return Err(Error::SchemaViolation(format!(
                    "attribute '{}' has non-finite bounds",
                    self.name
                )));
            }
            if self.lower[c] >= self.upper[c] {
                return Err(Error::SchemaViolation(format!(
                    "attribute '{}' needs lower < upper in every component",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Half the diagonal of the bounding box. Used as the largest radius a
    /// ball event over this attribute can meaningfully have.
    pub fn domain_radius(&self) -> f64 {
        let mut sq = 0.0;
        for c in 0..self.dim {
            let side = self.upper[c] - self.lower[c];
            sq += side * side;
        }
        sq.sqrt() / 2.0
    }

    pub fn contains(&self, value: &[f64]) -> bool {
        value.len() == self.dim
            && value
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    fn validate_value(&self, value: &[f64]) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: value.len(),
            });
        }
        for (c, v) in value.iter().enumerate() {
            if !v.is_finite() || *v < self.lower[c] || *v > self.upper[c] {
                return Err(Error::SchemaViolation(format!(
                    "value {} outside bounds of attribute '{}'",
                    v, self.name
                )));
            }
            if self.kind == AttributeKind::IntegerGrid && (v - v.round()).abs() > GRID_TOL {
                return Err(Error::SchemaViolation(format!(
                    "non-integral value {} in integer-grid attribute '{}'",
                    v, self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<AttributeSpec>,
    pub action_count: usize,
    /// Index of the dim-1 attribute that carries the reward signal.
    pub reward_attr: usize,
}

impl AttributeSchema {
    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::SchemaViolation("no attributes".into()));
        }
        for a in &self.attributes {
            a.validate()?;
        }
        let mut names: Vec<&str> = self.attributes.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.attributes.len() {
            return Err(Error::SchemaViolation("duplicate attribute names".into()));
        }
        if self.action_count == 0 {
            return Err(Error::SchemaViolation("action_count must be positive".into()));
        }
        if self.reward_attr >= self.attributes.len() {
            return Err(Error::SchemaViolation(format!(
                "reward_attr {} out of range",
                self.reward_attr
            )));
        }
        if self.attributes[self.reward_attr].dim != 1 {
            return Err(Error::SchemaViolation("reward attribute must have dim 1".into()));
        }
        Ok(())
    }

    pub fn attr(&self, i: usize) -> Result<&AttributeSpec> {
        self.attributes
            .get(i)
            .ok_or_else(|| Error::Index(format!("attribute {} of {}", i, self.attributes.len())))
    }

    pub fn n_attrs(&self) -> usize {
        self.attributes.len()
    }
}

/// One time step: a value per attribute plus the action taken from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Vec<Vec<f64>>,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub episodes: Vec<Vec<Step>>,
    /// Optional free-form provenance blob (round-trips through save/load).
    pub meta: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    attributes: Vec<AttributeSpec>,
    action_count: usize,
    reward_attr: usize,
    horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeLine {
    steps: Vec<Step>,
}

impl Dataset {
    pub fn new(schema: AttributeSchema, episodes: Vec<Vec<Step>>) -> Result<Self> {
        let d = Dataset {
            schema,
            episodes,
            meta: None,
        };
        d.validate()?;
        Ok(d)
    }

    /// Number of transitions per episode (steps minus one).
    pub fn horizon(&self) -> usize {
        self.episodes.first().map_or(0, |e| e.len() - 1)
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.episodes.is_empty() {
            return Err(Error::EmptyDataset("no episodes".into()));
        }
        let len = self.episodes[0].len();
        if len == 0 {
            return Err(Error::EmptyDataset("empty episode".into()));
        }
        for ep in &self.episodes {
            if ep.len() != len {
                return Err(Error::SchemaViolation(format!(
                    "ragged episodes: {} vs {}",
                    ep.len(),
                    len
                )));
            }
            for step in ep {
                if step.obs.len() != self.schema.n_attrs() {
                    return Err(Error::DimensionMismatch {
                        expected: self.schema.n_attrs(),
                        got: step.obs.len(),
                    });
                }
                for (a, value) in self.schema.attributes.iter().zip(&step.obs) {
                    a.validate_value(value)?;
                }
                if step.action >= self.schema.action_count {
                    return Err(Error::SchemaViolation(format!(
                        "action {} out of range {}",
                        step.action, self.schema.action_count
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.validate()?;
        let mut w = BufWriter::new(File::create(path)?);
        let header = Header {
            attributes: self.schema.attributes.clone(),
            action_count: self.schema.action_count,
            reward_attr: self.schema.reward_attr,
            horizon: self.horizon(),
            meta: self.meta.clone(),
        };
        serde_json::to_writer(&mut w, &header).map_err(io_err)?;
        w.write_all(b"\n")?;
        for ep in &self.episodes {
            serde_json::to_writer(&mut w, &EpisodeLine { steps: ep.clone() }).map_err(io_err)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            detail: "missing header line".into(),
        })??;
        let header: Header = serde_json::from_str(&first).map_err(|e| Error::Parse {
            line: 1,
            detail: e.to_string(),
        })?;
        let mut episodes = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ep: EpisodeLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 2,
                detail: e.to_string(),
            })?;
            if ep.steps.len() != header.horizon + 1 {
                return Err(Error::Parse {
                    line: i + 2,
                    detail: format!(
                        "episode has {} steps, header says {}",
                        ep.steps.len(),
                        header.horizon + 1
                    ),
                });
            }
            episodes.push(ep.steps);
        }
        let d = Dataset {
            schema: AttributeSchema {
                attributes: header.attributes,
                action_count: header.action_count,
                reward_attr: header.reward_attr,
            },
            episodes,
            meta: header.meta,
        };
        d.validate()?;
        Ok(d)
    }

    /// All values of attribute `i` inside the step range `[t_lo, t_hi]`
    /// (inclusive, defaulting to the whole episode), as (episode, step, value).
    pub fn attribute_samples(
        &self,
        i: usize,
        range: Option<(usize, usize)>,
    ) -> Result<Vec<(usize, usize, &[f64])>> {
        self.schema.attr(i)?;
        let last = self.horizon();
        let (lo, hi) = range.unwrap_or((0, last));
        if lo > hi || hi > last {
            return Err(Error::Index(format!("step range {}..={} of 0..={}", lo, hi, last)));
        }
        let mut out = Vec::with_capacity(self.episodes.len() * (hi - lo + 1));
        for (l, ep) in self.episodes.iter().enumerate() {
            for (t, step) in ep.iter().enumerate().take(hi + 1).skip(lo) {
                out.push((l, t, step.obs[i].as_slice()));
            }
        }
        Ok(out)
    }
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schema() -> AttributeSchema {
        AttributeSchema {
            attributes: vec![
                AttributeSpec {
                    name: "position".into(),
                    dim: 2,
                    lower: vec![0.0, 0.0],
                    upper: vec![4.0, 4.0],
                    kind: AttributeKind::IntegerGrid,
                },
                AttributeSpec {
                    name: "reward".into(),
                    dim: 1,
                    lower: vec![0.0],
                    upper: vec![1.0],
                    kind: AttributeKind::IntegerGrid,
                },
            ],
            action_count: 4,
            reward_attr: 1,
        }
    }

    fn step(x: f64, y: f64, r: f64, a: usize) -> Step {
        Step {
            obs: vec![vec![x, y], vec![r]],
            action: a,
        }
    }

    fn toy_dataset() -> Dataset {
        Dataset::new(
            toy_schema(),
            vec![
                vec![step(0.0, 0.0, 0.0, 1), step(1.0, 0.0, 0.0, 2), step(1.0, 1.0, 1.0, 0)],
                vec![step(4.0, 4.0, 0.0, 3), step(4.0, 3.0, 0.0, 3), step(4.0, 2.0, 0.0, 1)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn horizon_counts_transitions() {
        let d = toy_dataset();
        assert_eq!(d.horizon(), 2);
        assert_eq!(d.episode_count(), 2);
    }

    #[test]
    fn rejects_ragged_episodes() {
        let mut d = toy_dataset();
        d.episodes[1].pop();
        assert!(matches!(d.validate(), Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn rejects_out_of_bounds_value() {
        let mut d = toy_dataset();
        d.episodes[0][1].obs[0][0] = 5.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn rejects_fractional_grid_value() {
        let mut d = toy_dataset();
        d.episodes[0][1].obs[0][0] = 0.5;
        assert!(d.validate().is_err());
    }

    #[test]
    fn rejects_bad_action() {
        let mut d = toy_dataset();
        d.episodes[0][0].action = 4;
        assert!(d.validate().is_err());
    }

    #[test]
    fn rejects_inverted_bounds() {
        let mut s = toy_schema();
        s.attributes[0].upper[1] = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut d = toy_dataset();
        d.meta = Some(serde_json::json!({"source": "test"}));
        d.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(d, back);

        // Byte determinism: saving the reloaded dataset reproduces the file.
        let path2 = dir.path().join("d2.jsonl");
        back.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn attribute_samples_respects_range() {
        let d = toy_dataset();
        let all = d.attribute_samples(0, None).unwrap();
        assert_eq!(all.len(), 6);
        let tail = d.attribute_samples(1, Some((1, 2))).unwrap();
        assert_eq!(tail.len(), 4);
        assert_eq!(tail[1], (0, 2, &[1.0][..]));
        assert!(d.attribute_samples(0, Some((2, 1))).is_err());
        assert!(d.attribute_samples(0, Some((0, 3))).is_err());
    }

    #[test]
    fn domain_radius_is_half_diagonal() {
        let s = toy_schema();
        let r = s.attributes[0].domain_radius();
        assert!((r - (32.0f64).sqrt() / 2.0).abs() < 1e-12);
    }
}
