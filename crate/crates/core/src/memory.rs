//! Binary latch memory built from discovered ball events.
//!
//! A memory unit starts at 0 and latches to 1 one step after its event
//! attribute enters the ball: the bit at step t answers "was the observation
//! inside the ball at any step strictly before t". Latched bits never reset
//! within an episode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infotheory::BallEvent;
use crate::trajectory::{AttributeKind, AttributeSchema, AttributeSpec, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryUnit {
    pub id: usize,
    pub event: BallEvent,
}

/// Current bits of all units, unit `id` at position `id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryState {
    bits: Vec<bool>,
}

impl MemoryState {
    pub fn zeros(units: usize) -> Self {
        MemoryState {
            bits: vec![false; units],
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bits packed into an integer, unit 0 in the lowest position.
    pub fn as_index(&self) -> u64 {
        self.bits
            .iter()
            .enumerate()
            .fold(0, |acc, (k, &b)| acc | ((b as u64) << k))
    }
}

/// Unit ids must be unique (they name the appended columns); every event
/// references an attribute present in the observation. Bit positions follow
/// slice order, not ids.
pub fn validate_units(units: &[MemoryUnit], obs_arity: usize) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for (k, u) in units.iter().enumerate() {
        if !seen.insert(u.id) {
            return Err(Error::SchemaViolation(format!(
                "duplicate memory unit id {}",
                u.id
            )));
        }
        if u.event.attr >= obs_arity {
            return Err(Error::Index(format!(
                "memory unit {} tracks attribute {} of {}",
                k, u.event.attr, obs_arity
            )));
        }
    }
    Ok(())
}

/// One-step latch update given the observation at the current step.
pub fn memory_step(state: &MemoryState, obs: &[Vec<f64>], units: &[MemoryUnit]) -> Result<MemoryState> {
    if state.len() != units.len() {
        return Err(Error::DimensionMismatch {
            expected: units.len(),
            got: state.len(),
        });
    }
    validate_units(units, obs.len())?;
    let mut bits = state.bits.clone();
    for (k, u) in units.iter().enumerate() {
        let v = &obs[u.event.attr];
        if v.len() != u.event.center.len() {
            return Err(Error::DimensionMismatch {
                expected: u.event.center.len(),
                got: v.len(),
            });
        }
        bits[k] = bits[k] || u.event.contains(v);
    }
    Ok(MemoryState { bits })
}

/// Schema of a dataset augmented with one dim-1 binary column per unit.
pub fn augmented_schema(schema: &AttributeSchema, units: &[MemoryUnit]) -> Result<AttributeSchema> {
    validate_units(units, schema.n_attrs())?;
    for u in units {
        u.event.validate(schema)?;
    }
    let mut out = schema.clone();
    for u in units {
        out.attributes.push(AttributeSpec {
            name: format!("mem_{}", u.id),
            dim: 1,
            lower: vec![0.0],
            upper: vec![1.0],
            kind: AttributeKind::IntegerGrid,
        });
    }
    out.validate()?;
    Ok(out)
}

/// Append one dim-1 integer column per unit holding the latch bit at each
/// step. Unit events reference attributes by their index in the input
/// dataset, so augmenting twice with disjoint unit lists composes.
pub fn augment_dataset(d: &Dataset, units: &[MemoryUnit]) -> Result<Dataset> {
    d.validate()?;
    let schema = augmented_schema(&d.schema, units)?;
    let mut out = d.clone();
    let n0 = d.schema.n_attrs();
    out.schema = schema;
    for ep in out.episodes.iter_mut() {
        let mut state = MemoryState::zeros(units.len());
        for step in ep.iter_mut() {
            for &bit in state.bits() {
                step.obs.push(vec![bit as u64 as f64]);
            }
            // Advance on the original attributes only.
            state = memory_step(&state, &step.obs[..n0], units)?;
        }
    }
    out.validate()?;
    Ok(out)
}
