//! Entropy of transition variables and the relaxed event objective.
//!
//! A ball event `E` fires at step `t` when the tracked attribute has entered
//! the ball at some strictly earlier step. Discovery searches for the ball
//! that most reduces the conditional entropy of a noisy transition variable.
//! The search needs a differentiable surrogate, so hard indicators are
//! relaxed to soft memberships; [`RelaxedObjective`] evaluates the relaxed
//! entropy and its analytic gradient with respect to the ball parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::density::{empirical_pmf, GridSpec, Pmf, PmfVar, VarRole, VarSource};
use crate::error::{Error, Result};
use crate::trajectory::{AttributeSchema, Dataset};

const LN2: f64 = std::f64::consts::LN_2;

/// Euclidean ball over one attribute's value space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallEvent {
    pub attr: usize,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallEvent {
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        let a = schema.attr(self.attr)?;
        if self.center.len() != a.dim {
            return Err(Error::DimensionMismatch {
                expected: a.dim,
                got: self.center.len(),
            });
        }
        if !a.contains(&self.center) {
            return Err(Error::DegenerateBall("center outside attribute domain".into()));
        }
        if !self.radius.is_finite() || self.radius < 0.0 {
            return Err(Error::DegenerateBall(format!("bad radius {}", self.radius)));
        }
        Ok(())
    }

    pub fn contains(&self, value: &[f64]) -> bool {
        debug_assert_eq!(value.len(), self.center.len());
        let mut sq = 0.0;
        for (v, c) in value.iter().zip(&self.center) {
            sq += (v - c) * (v - c);
        }
        sq.sqrt() <= self.radius
    }
}

/// Shape of the soft membership `m = phi(d_min - r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftForm {
    /// `1 / (1 + exp(sharpness * u))`: smooth on both sides of the boundary.
    Logistic,
    /// `min(1, exp(-sharpness * u))`: saturates at 1 inside the ball.
    ClampedExp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoftEventConfig {
    pub sharpness: f64,
    pub form: SoftForm,
}

impl Default for SoftEventConfig {
    fn default() -> Self {
        SoftEventConfig {
            sharpness: 4.0,
            form: SoftForm::Logistic,
        }
    }
}

impl SoftEventConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err(Error::Config(format!(
                "sharpness must be positive, got {}",
                self.sharpness
            )));
        }
        Ok(())
    }

    /// Membership and its derivative in `u = d_min - r`.
    fn membership(&self, u: f64) -> (f64, f64) {
        let w = self.sharpness;
        match self.form {
            SoftForm::Logistic => {
                let m = if u >= 0.0 {
                    let e = (-w * u).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + (w * u).exp())
                };
                (m, -w * m * (1.0 - m))
            }
            SoftForm::ClampedExp => {
                if u < 0.0 {
                    (1.0, 0.0)
                } else {
                    let m = (-w * u).exp();
                    (m, -w * m)
                }
            }
        }
    }
}

/// A conditioning variable of a transition: an attribute at the base step or
/// the action taken there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParentVar {
    Attribute(usize),
    Action,
}

/// `H(X | rest)` in bits for a normalized joint with exactly one
/// `Target`-role variable; all other variables condition.
pub fn conditional_entropy(p: &Pmf) -> Result<f64> {
    p.validate()?;
    let targets: Vec<usize> = p
        .vars()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.role == VarRole::Target)
        .map(|(i, _)| i)
        .collect();
    if targets.len() != 1 {
        return Err(Error::MalformedPmf(format!(
            "need exactly one target variable, found {}",
            targets.len()
        )));
    }
    let target = targets[0];

    let mut group: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (key, mass) in p.iter() {
        let mut g: Vec<u32> = key.clone();
        g.remove(target);
        *group.entry(g).or_insert(0.0) += mass;
    }
    let mut h = 0.0;
    for (key, mass) in p.iter() {
        if mass <= 0.0 {
            continue;
        }
        let mut g: Vec<u32> = key.clone();
        g.remove(target);
        let q = group[&g];
        h += mass * (q / mass).log2();
    }
    Ok(h.max(0.0))
}

/// Entropy drop achieved by extra conditioning.
pub fn information_gain(h_without: f64, h_with: f64) -> f64 {
    h_without - h_with
}

/// `H(X_{t+1} | parents_t)` with hard counts, in bits.
pub fn transition_entropy(
    d: &Dataset,
    target: usize,
    parents: &[ParentVar],
    g: &GridSpec,
) -> Result<f64> {
    let vars = transition_vars(target, parents, false);
    conditional_entropy(&empirical_pmf(d, &vars, g, None)?)
}

fn transition_vars(target: usize, parents: &[ParentVar], with_event: bool) -> Vec<PmfVar> {
    let mut vars = vec![PmfVar {
        source: VarSource::Attribute {
            attr: target,
            offset: 1,
        },
        role: VarRole::Target,
    }];
    for p in parents {
        vars.push(PmfVar {
            source: match *p {
                ParentVar::Attribute(attr) => VarSource::Attribute { attr, offset: 0 },
                ParentVar::Action => VarSource::Action { offset: 0 },
            },
            role: VarRole::Parent,
        });
    }
    if with_event {
        vars.push(PmfVar {
            source: VarSource::Event,
            role: VarRole::Event,
        });
    }
    vars
}

/// Soft membership of the event "entered `Ball` strictly before step t", one
/// value per transition base step, row-major by episode. The first step of
/// every episode has an empty past and weight zero.
pub fn soft_event_weights(d: &Dataset, b: &BallEvent, cfg: &SoftEventConfig) -> Result<Vec<f64>> {
    d.validate()?;
    cfg.validate()?;
    b.validate(&d.schema)?;
    let h = d.horizon();
    if h == 0 {
        return Err(Error::EmptyDataset("no transitions to weight".into()));
    }
    let mut out = Vec::with_capacity(d.episode_count() * h);
    for ep in &d.episodes {
        let mut d_min = f64::INFINITY;
        for (t, step) in ep.iter().enumerate().take(h) {
            out.push(if t == 0 {
                0.0
            } else {
                cfg.membership(d_min - b.radius).0
            });
            let v = &step.obs[b.attr];
            let mut sq = 0.0;
            for (x, c) in v.iter().zip(&b.center) {
                sq += (x - c) * (x - c);
            }
            d_min = d_min.min(sq.sqrt());
        }
    }
    Ok(out)
}

/// Relaxed conditional entropy `H(X_{t+1} | parents_t, E_soft)` in bits,
/// assembled from the public histogram pipeline.
pub fn relaxed_conditional_entropy(
    d: &Dataset,
    target: usize,
    parents: &[ParentVar],
    b: &BallEvent,
    cfg: &SoftEventConfig,
    g: &GridSpec,
) -> Result<f64> {
    let weights = soft_event_weights(d, b, cfg)?;
    let vars = transition_vars(target, parents, true);
    conditional_entropy(&empirical_pmf(d, &vars, g, Some(&weights))?)
}

/// Analytic gradient of the relaxed conditional entropy with respect to the
/// ball center and radius. Returns `(d/d_center, d/d_radius)`.
pub fn relaxed_entropy_gradient(
    d: &Dataset,
    target: usize,
    parents: &[ParentVar],
    b: &BallEvent,
    cfg: &SoftEventConfig,
    g: &GridSpec,
) -> Result<(Vec<f64>, f64)> {
    if b.radius == 0.0 {
        return Err(Error::DegenerateBall("gradient needs radius > 0".into()));
    }
    let mut obj = RelaxedObjective::new(d, target, parents, b.attr, cfg, g)?;
    let (_, grad_c, grad_r) = obj.entropy_and_gradient(&b.center, b.radius)?;
    Ok((grad_c, grad_r))
}

/// Preprocessed evaluator for one (target, parents, event attribute) triple.
///
/// Construction bins every transition sample once; evaluating a candidate
/// ball afterwards costs one pass over the samples. The argmin data point of
/// each sample's past is treated as locally constant, which makes the
/// gradient exact away from ties in the distance minimum.
pub struct RelaxedObjective {
    episodes: usize,
    horizon: usize,
    dim: usize,
    cfg: SoftEventConfig,
    /// Event-attribute values, episode-major: `obs[(l*(h+1) + t)*dim ..]`.
    obs: Vec<f64>,
    joint_of_sample: Vec<u32>,
    cond_of_sample: Vec<u32>,
    cond_of_joint: Vec<u32>,
    n_joint: usize,
    n_cond: usize,
    base_entropy: f64,
    // Scratch reused across evaluations.
    d_buf: Vec<f64>,
    amin_buf: Vec<u32>,
    mass_joint: Vec<f64>,
    mass_cond: Vec<f64>,
}

impl RelaxedObjective {
    pub fn new(
        d: &Dataset,
        target: usize,
        parents: &[ParentVar],
        event_attr: usize,
        cfg: &SoftEventConfig,
        g: &GridSpec,
    ) -> Result<Self> {
        d.validate()?;
        cfg.validate()?;
        let h = d.horizon();
        if h == 0 {
            return Err(Error::EmptyDataset("no transitions".into()));
        }
        let spec = d.schema.attr(event_attr)?;
        let dim = spec.dim;
        d.schema.attr(target)?;
        for p in parents {
            if let ParentVar::Attribute(a) = p {
                d.schema.attr(*a)?;
            }
        }

        let l = d.episode_count();
        let mut obs = Vec::with_capacity(l * (h + 1) * dim);
        let mut joint_keys: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
        let mut cond_keys: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
        let mut joint_of_sample = Vec::with_capacity(l * h);
        let mut cond_of_sample = Vec::with_capacity(l * h);
        let mut joint_cond_pairs: Vec<(u32, u32)> = Vec::new();

        let mut key = Vec::with_capacity(parents.len() + 1);
        for ep in d.episodes.iter() {
            for step in ep {
                obs.extend_from_slice(&step.obs[event_attr]);
            }
            for t in 0..h {
                key.clear();
                for p in parents {
                    key.push(match *p {
                        ParentVar::Attribute(a) => g.bin_of(a, &ep[t].obs[a])?,
                        ParentVar::Action => ep[t].action as u32,
                    });
                }
                let next_cond = cond_keys.len() as u32;
                let cid = *cond_keys.entry(key.clone()).or_insert(next_cond);

                key.push(g.bin_of(target, &ep[t + 1].obs[target])?);
                let next_joint = joint_keys.len() as u32;
                let jid = *joint_keys.entry(key.clone()).or_insert(next_joint);
                if jid == next_joint {
                    joint_cond_pairs.push((jid, cid));
                }
                joint_of_sample.push(jid);
                cond_of_sample.push(cid);
            }
        }
        let n_joint = joint_keys.len();
        let n_cond = cond_keys.len();
        let mut cond_of_joint = vec![0u32; n_joint];
        for (jid, cid) in joint_cond_pairs {
            cond_of_joint[jid as usize] = cid;
        }

        let mut obj = RelaxedObjective {
            episodes: l,
            horizon: h,
            dim,
            cfg: *cfg,
            obs,
            joint_of_sample,
            cond_of_sample,
            cond_of_joint,
            n_joint,
            n_cond,
            base_entropy: 0.0,
            d_buf: vec![0.0; l * h],
            amin_buf: vec![0; l * h],
            mass_joint: vec![0.0; n_joint * 2],
            mass_cond: vec![0.0; n_cond * 2],
        };
        obj.base_entropy = obj.entropy_of_masses_unsplit();
        Ok(obj)
    }

    /// `H(X | parents)` without any event column.
    pub fn base_entropy(&self) -> f64 {
        self.base_entropy
    }

    pub fn sample_count(&self) -> usize {
        self.episodes * self.horizon
    }

    fn entropy_of_masses_unsplit(&self) -> f64 {
        let mut mj = vec![0.0f64; self.n_joint];
        let mut mc = vec![0.0f64; self.n_cond];
        for s in 0..self.sample_count() {
            mj[self.joint_of_sample[s] as usize] += 1.0;
            mc[self.cond_of_sample[s] as usize] += 1.0;
        }
        let n = self.sample_count() as f64;
        let mut h = 0.0;
        for (jb, &m) in mj.iter().enumerate() {
            if m > 0.0 {
                let c = mc[self.cond_of_joint[jb] as usize];
                h += (m / n) * (c / m).ln();
            }
        }
        (h / LN2).max(0.0)
    }

    /// Distance of each base step's past to the center, with argmins. Fills
    /// `d_buf`/`amin_buf`; step 0 of each episode keeps an infinite distance.
    fn scan_pasts(&mut self, center: &[f64]) {
        let (h, dim) = (self.horizon, self.dim);
        for l in 0..self.episodes {
            let ep0 = l * (h + 1);
            let mut d_min = f64::INFINITY;
            let mut amin = 0u32;
            for t in 0..h {
                let s = l * h + t;
                self.d_buf[s] = d_min;
                self.amin_buf[s] = amin;
                let o = &self.obs[(ep0 + t) * dim..(ep0 + t + 1) * dim];
                let mut sq = 0.0;
                for (x, c) in o.iter().zip(center) {
                    sq += (x - c) * (x - c);
                }
                let dist = sq.sqrt();
                if dist < d_min {
                    d_min = dist;
                    amin = t as u32;
                }
            }
        }
    }

    fn accumulate_masses(&mut self, center: &[f64], radius: f64, hard: bool) {
        self.scan_pasts(center);
        self.mass_joint.iter_mut().for_each(|m| *m = 0.0);
        self.mass_cond.iter_mut().for_each(|m| *m = 0.0);
        let h = self.horizon;
        for s in 0..self.sample_count() {
            let m = if s % h == 0 {
                0.0
            } else if hard {
                if self.d_buf[s] <= radius {
                    1.0
                } else {
                    0.0
                }
            } else {
                self.cfg.membership(self.d_buf[s] - radius).0
            };
            let jb = self.joint_of_sample[s] as usize;
            let cb = self.cond_of_sample[s] as usize;
            self.mass_joint[jb * 2] += 1.0 - m;
            self.mass_joint[jb * 2 + 1] += m;
            self.mass_cond[cb * 2] += 1.0 - m;
            self.mass_cond[cb * 2 + 1] += m;
        }
    }

    fn entropy_of_masses(&self) -> f64 {
        let n = self.sample_count() as f64;
        let mut h = 0.0;
        for jb in 0..self.n_joint {
            let cb = self.cond_of_joint[jb] as usize;
            for e in 0..2 {
                let m = self.mass_joint[jb * 2 + e];
                if m > 0.0 {
                    h += (m / n) * (self.mass_cond[cb * 2 + e] / m).ln();
                }
            }
        }
        (h / LN2).max(0.0)
    }

    /// Relaxed entropy at a candidate ball.
    pub fn entropy(&mut self, center: &[f64], radius: f64) -> Result<f64> {
        self.check_center(center)?;
        self.accumulate_masses(center, radius, false);
        Ok(self.entropy_of_masses())
    }

    /// Entropy with the hard latched indicator instead of soft memberships.
    pub fn hard_entropy(&mut self, center: &[f64], radius: f64) -> Result<f64> {
        self.check_center(center)?;
        self.accumulate_masses(center, radius, true);
        Ok(self.entropy_of_masses())
    }

    /// Relaxed entropy plus its gradient in (center, radius).
    pub fn entropy_and_gradient(
        &mut self,
        center: &[f64],
        radius: f64,
    ) -> Result<(f64, Vec<f64>, f64)> {
        self.check_center(center)?;
        self.accumulate_masses(center, radius, false);
        let entropy = self.entropy_of_masses();

        let n = self.sample_count() as f64;
        let (h, dim) = (self.horizon, self.dim);
        let mut grad_c = vec![0.0; dim];
        let mut grad_r = 0.0;
        for s in 0..self.sample_count() {
            if s % h == 0 {
                continue;
            }
            let (_, dm_du) = self.cfg.membership(self.d_buf[s] - radius);
            if dm_du == 0.0 {
                continue;
            }
            let jb = self.joint_of_sample[s] as usize;
            let cb = self.cond_of_sample[s] as usize;
            let (mj1, mj0) = (self.mass_joint[jb * 2 + 1], self.mass_joint[jb * 2]);
            let (mc1, mc0) = (self.mass_cond[cb * 2 + 1], self.mass_cond[cb * 2]);
            if mj1 <= 0.0 || mj0 <= 0.0 {
                continue;
            }
            // dH/dm for this sample's unit of mass moving from E=0 to E=1.
            let dh_dm = -((mj1 * mc0) / (mc1 * mj0)).ln() / (n * LN2);
            // u = d - r, so du/dr = -1.
            grad_r += dh_dm * (-dm_du);
            let dist = self.d_buf[s];
            if dist > 1e-12 && dist.is_finite() {
                let l = s / h;
                let t_min = self.amin_buf[s] as usize;
                let o = &self.obs[(l * (h + 1) + t_min) * dim..(l * (h + 1) + t_min + 1) * dim];
                for c in 0..dim {
                    grad_c[c] += dh_dm * dm_du * (center[c] - o[c]) / dist;
                }
            }
        }
        Ok((entropy, grad_c, grad_r))
    }

    fn check_center(&self, center: &[f64]) -> Result<()> {
        if center.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: center.len(),
            });
        }
        Ok(())
    }
}
