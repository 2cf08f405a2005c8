//! Tabular model fitting and value iteration over augmented states.
//!
//! A state is the cross product of every observable attribute's grid cell
//! with the memory bit vector. The model is a maximum-likelihood frequency
//! table per (state, action); planning enumerates the full state space so a
//! policy exists even for memory combinations never seen in the data.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryState;
use crate::trajectory::{AttributeKind, AttributeSchema, Dataset};

/// Hard cap on enumerable states (keeps value tables in memory).
const MAX_ENUMERATED_STATES: u64 = 1 << 22;

/// Iteration cap for value iteration.
const MAX_SWEEPS: usize = 100_000;

/// Bijection between (observable cells, memory bits) and flat state ids:
/// `id = cell * 2^m + bits`. The last `mem_count` schema attributes are the
/// memory columns; the rest form the cell via mixed-radix lattice indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedStateIndex {
    comp_cards: Vec<Vec<u64>>,
    lowers: Vec<Vec<f64>>,
    n_cells: u64,
    mem_count: usize,
}

impl AugmentedStateIndex {
    /// `schema` is the (possibly augmented) dataset schema whose trailing
    /// `mem_count` attributes are memory bits.
    pub fn new(schema: &AttributeSchema, mem_count: usize) -> Result<Self> {
        schema.validate()?;
        let n = schema.n_attrs();
        if mem_count > n {
            return Err(Error::Config(format!(
                "{} memory columns exceed {} attributes",
                mem_count, n
            )));
        }
        let cell_attrs = n - mem_count;
        let mut comp_cards = Vec::with_capacity(cell_attrs);
        let mut lowers = Vec::with_capacity(cell_attrs);
        let mut n_cells: u64 = 1;
        for a in &schema.attributes[..cell_attrs] {
            if a.kind != AttributeKind::IntegerGrid {
                return Err(Error::SchemaViolation(format!(
                    "attribute '{}' is not integer-grid; cannot enumerate states",
                    a.name
                )));
            }
            let mut cards = Vec::with_capacity(a.dim);
            for c in 0..a.dim {
                let card = (a.upper[c].round() - a.lower[c].round()) as i64 + 1;
                cards.push(card as u64);
                n_cells = n_cells
                    .checked_mul(card as u64)
                    .ok_or_else(|| Error::Config("state space overflows".into()))?;
            }
            comp_cards.push(cards);
            lowers.push(a.lower.clone());
        }
        for a in &schema.attributes[cell_attrs..] {
            if a.dim != 1 || a.lower[0] != 0.0 || a.upper[0] != 1.0 {
                return Err(Error::SchemaViolation(format!(
                    "attribute '{}' is not a binary memory column",
                    a.name
                )));
            }
        }
        let idx = AugmentedStateIndex {
            comp_cards,
            lowers,
            n_cells,
            mem_count,
        };
        if idx.n_states() > MAX_ENUMERATED_STATES {
            return Err(Error::Config(format!(
                "state space of {} states is too large to enumerate",
                idx.n_states()
            )));
        }
        Ok(idx)
    }

    pub fn n_states(&self) -> u64 {
        self.n_cells << self.mem_count
    }

    pub fn cell_count(&self) -> u64 {
        self.n_cells
    }

    pub fn mem_count(&self) -> usize {
        self.mem_count
    }

    pub fn cell_attr_count(&self) -> usize {
        self.comp_cards.len()
    }

    /// Cell id of the observable attributes (memory columns excluded).
    pub fn encode_cell(&self, obs: &[Vec<f64>]) -> Result<u64> {
        if obs.len() < self.comp_cards.len() {
            return Err(Error::DimensionMismatch {
                expected: self.comp_cards.len(),
                got: obs.len(),
            });
        }
        let mut id: u64 = 0;
        for (i, cards) in self.comp_cards.iter().enumerate() {
            let value = &obs[i];
            if value.len() != cards.len() {
                return Err(Error::DimensionMismatch {
                    expected: cards.len(),
                    got: value.len(),
                });
            }
            for (c, &card) in cards.iter().enumerate() {
                let k = (value[c] - self.lowers[i][c]).round();
                if k < 0.0 || k as u64 >= card {
                    return Err(Error::UnknownState(format!(
                        "value {} outside lattice of attribute {}",
                        value[c], i
                    )));
                }
                id = id * card + k as u64;
            }
        }
        Ok(id)
    }

    /// State id from original observations plus an explicit memory state.
    pub fn encode(&self, obs: &[Vec<f64>], mem: &MemoryState) -> Result<u64> {
        if mem.len() != self.mem_count {
            return Err(Error::DimensionMismatch {
                expected: self.mem_count,
                got: mem.len(),
            });
        }
        Ok((self.encode_cell(obs)? << self.mem_count) | mem.as_index())
    }

    /// State id from an augmented observation row (memory columns inline).
    pub fn encode_augmented(&self, obs: &[Vec<f64>]) -> Result<u64> {
        let cells = self.comp_cards.len();
        if obs.len() != cells + self.mem_count {
            return Err(Error::DimensionMismatch {
                expected: cells + self.mem_count,
                got: obs.len(),
            });
        }
        let mut bits: u64 = 0;
        for k in 0..self.mem_count {
            let v = obs[cells + k][0];
            if v != 0.0 && v != 1.0 {
                return Err(Error::UnknownState(format!("non-binary memory value {}", v)));
            }
            bits |= (v as u64) << k;
        }
        Ok((self.encode_cell(obs)? << self.mem_count) | bits)
    }
}

/// Frequency estimates for one visited (state, action) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub visits: u64,
    /// Next-state distribution, ascending by state id, probabilities sum to 1.
    pub next: Vec<(u64, f64)>,
    /// Discrete reward distribution, ascending by value.
    pub rewards: Vec<(f64, f64)>,
    pub mean_reward: f64,
}

/// Tabular MDP estimate. `states` is the sorted planning support; actions
/// absent from `entries` are unvisited and default to a reward-0 self-loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    pub n_actions: usize,
    pub states: Vec<u64>,
    pub entries: BTreeMap<u64, Vec<Option<TransitionStats>>>,
}

impl TabularModel {
    pub fn from_parts(
        n_actions: usize,
        mut states: Vec<u64>,
        entries: BTreeMap<u64, Vec<Option<TransitionStats>>>,
    ) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::Config("model needs at least one action".into()));
        }
        states.sort_unstable();
        states.dedup();
        let m = TabularModel {
            n_actions,
            states,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (s, row) in &self.entries {
            if self.states.binary_search(s).is_err() {
                return Err(Error::UnknownState(format!("entry state {} not in support", s)));
            }
            if row.len() != self.n_actions {
                return Err(Error::DimensionMismatch {
                    expected: self.n_actions,
                    got: row.len(),
                });
            }
            for stats in row.iter().flatten() {
                if stats.visits == 0 {
                    return Err(Error::MalformedPmf("visited entry with zero count".into()));
                }
                for dist in [
                    stats.next.iter().map(|&(_, p)| p).collect::<Vec<_>>(),
                    stats.rewards.iter().map(|&(_, p)| p).collect::<Vec<_>>(),
                ] {
                    let total: f64 = dist.iter().sum();
                    if (total - 1.0).abs() > 1e-9 || dist.iter().any(|&p| p < 0.0) {
                        return Err(Error::MalformedPmf(format!(
                            "distribution sums to {}",
                            total
                        )));
                    }
                }
                for &(next, _) in &stats.next {
                    if self.states.binary_search(&next).is_err() {
                        return Err(Error::UnknownState(format!(
                            "next state {} not in support",
                            next
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn stats(&self, s: u64, a: usize) -> Option<&TransitionStats> {
        self.entries.get(&s).and_then(|row| row.get(a)).and_then(|o| o.as_ref())
    }

    pub fn is_visited(&self, s: u64, a: usize) -> bool {
        self.stats(s, a).is_some()
    }
}

/// Fit frequency estimates from an augmented dataset, enumerating the full
/// cell × memory state space.
pub fn fit_model(d: &Dataset, idx: &AugmentedStateIndex) -> Result<TabularModel> {
    d.validate()?;
    if d.horizon() == 0 {
        return Err(Error::EmptyDataset("no transitions to fit".into()));
    }
    if d.schema.reward_attr >= idx.cell_attr_count() {
        return Err(Error::SchemaViolation(
            "reward attribute must be observable, not a memory column".into(),
        ));
    }

    type Counts = BTreeMap<u64, u64>;
    let mut next_counts: HashMap<(u64, u16), Counts> = HashMap::new();
    let mut reward_counts: HashMap<(u64, u16), BTreeMap<u64, u64>> = HashMap::new();
    for ep in &d.episodes {
        for t in 0..d.horizon() {
            let s = idx.encode_augmented(&ep[t].obs)?;
            let s2 = idx.encode_augmented(&ep[t + 1].obs)?;
            let a = ep[t].action as u16;
            let r = ep[t + 1].obs[d.schema.reward_attr][0];
            *next_counts.entry((s, a)).or_default().entry(s2).or_insert(0) += 1;
            *reward_counts
                .entry((s, a))
                .or_default()
                .entry(r.to_bits())
                .or_insert(0) += 1;
        }
    }

    let mut entries: BTreeMap<u64, Vec<Option<TransitionStats>>> = BTreeMap::new();
    for ((s, a), nexts) in next_counts {
        let visits: u64 = nexts.values().sum();
        let next: Vec<(u64, f64)> = nexts
            .into_iter()
            .map(|(s2, c)| (s2, c as f64 / visits as f64))
            .collect();
        let mut rewards: Vec<(f64, f64)> = reward_counts[&(s, a)]
            .iter()
            .map(|(&bits, &c)| (f64::from_bits(bits), c as f64 / visits as f64))
            .collect();
        rewards.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mean_reward = rewards.iter().map(|&(v, p)| v * p).sum();
        let row = entries
            .entry(s)
            .or_insert_with(|| vec![None; d.schema.action_count]);
        row[a as usize] = Some(TransitionStats {
            visits,
            next,
            rewards,
            mean_reward,
        });
    }

    TabularModel::from_parts(
        d.schema.action_count,
        (0..idx.n_states()).collect(),
        entries,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub states: Vec<u64>,
    pub values: Vec<f64>,
    pub gamma: f64,
    pub sweeps: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub states: Vec<u64>,
    pub actions: Vec<u16>,
}

impl PolicyTable {
    pub fn action(&self, s: u64) -> Option<usize> {
        self.states
            .binary_search(&s)
            .ok()
            .map(|i| self.actions[i] as usize)
    }
}

/// Bellman optimality iteration to a max-norm residual of `tol`. Unvisited
/// (state, action) pairs behave as reward-0 self-loops.
pub fn value_iteration(m: &TabularModel, gamma: f64, tol: f64) -> Result<(ValueTable, PolicyTable)> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must be in [0, 1), got {}", gamma)));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {}", tol)));
    }
    m.validate()?;

    let n = m.states.len();
    if n == 0 {
        return Err(Error::EmptyDataset("model has no states".into()));
    }
    let pos: HashMap<u64, u32> = m
        .states
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i as u32))
        .collect();
    // (mean reward, resolved next-state positions) per state and action.
    let mut resolved: Vec<Vec<Option<(f64, Vec<(u32, f64)>)>>> = vec![Vec::new(); n];
    for (i, resolved_row) in resolved.iter_mut().enumerate() {
        let mut row = vec![None; m.n_actions];
        if let Some(entry) = m.entries.get(&m.states[i]) {
            for (a, stats) in entry.iter().enumerate() {
                if let Some(st) = stats {
                    let next = st.next.iter().map(|&(s2, p)| (pos[&s2], p)).collect();
                    row[a] = Some((st.mean_reward, next));
                }
            }
        }
        *resolved_row = row;
    }

    let mut values = vec![0.0f64; n];
    let mut next_values = vec![0.0f64; n];
    let mut residual_history = Vec::new();
    let mut sweeps = 0;
    loop {
        let mut residual = 0.0f64;
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            for entry in &resolved[i] {
                let q = match entry {
                    Some((r, next)) => {
                        let mut v = *r;
                        for &(j, p) in next {
                            v += gamma * p * values[j as usize];
                        }
                        v
                    }
                    None => gamma * values[i],
                };
                if q > best {
                    best = q;
                }
            }
            next_values[i] = best;
            residual = residual.max((best - values[i]).abs());
        }
        std::mem::swap(&mut values, &mut next_values);
        sweeps += 1;
        residual_history.push(residual);
        if residual <= tol {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::Nonconvergence { residual });
        }
    }

    let mut actions = vec![0u16; n];
    for i in 0..n {
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0u16;
        for (a, entry) in resolved[i].iter().enumerate() {
            let q = match entry {
                Some((r, next)) => {
                    let mut v = *r;
                    for &(j, p) in next {
                        v += gamma * p * values[j as usize];
                    }
                    v
                }
                None => gamma * values[i],
            };
            if q > best {
                best = q;
                best_a = a as u16;
            }
        }
        actions[i] = best_a;
    }

    let residual = *residual_history.last().unwrap();
    Ok((
        ValueTable {
            states: m.states.clone(),
            values,
            gamma,
            sweeps,
            residual,
            residual_history,
        },
        PolicyTable {
            states: m.states.clone(),
            actions,
        },
    ))
}

/// Policy lookup for a live observation. Unknown states fall back to action
/// 0 with a logged warning rather than failing the episode.
pub fn greedy_action(
    pt: &PolicyTable,
    idx: &AugmentedStateIndex,
    obs: &[Vec<f64>],
    mem: &MemoryState,
) -> Result<usize> {
    let s = idx.encode(obs, mem)?;
    match pt.action(s) {
        Some(a) => Ok(a),
        None => {
            log::warn!("state {} missing from policy; falling back to action 0", s);
            Ok(0)
        }
    }
}

/// Most likely reward value at (s, a); ties pick the smaller value and
/// unvisited pairs predict 0.
pub fn predict_reward_class(m: &TabularModel, s: u64, a: usize) -> f64 {
    match m.stats(s, a) {
        Some(st) => {
            let mut best = 0.0;
            let mut best_p = f64::NEG_INFINITY;
            for &(v, p) in &st.rewards {
                if p > best_p {
                    best_p = p;
                    best = v;
                }
            }
            best
        }
        None => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::AttributeSpec;

    fn grid_schema(mem: usize) -> AttributeSchema {
        let mut attributes = vec![
            AttributeSpec {
                name: "position".into(),
                dim: 2,
                lower: vec![0.0, 0.0],
                upper: vec![2.0, 2.0],
                kind: AttributeKind::IntegerGrid,
            },
            AttributeSpec {
                name: "reward".into(),
                dim: 1,
                lower: vec![0.0],
                upper: vec![1.0],
                kind: AttributeKind::IntegerGrid,
            },
        ];
        for k in 0..mem {
            attributes.push(AttributeSpec {
                name: format!("mem_{}", k),
                dim: 1,
                lower: vec![0.0],
                upper: vec![1.0],
                kind: AttributeKind::IntegerGrid,
            });
        }
        AttributeSchema {
            attributes,
            action_count: 4,
            reward_attr: 1,
        }
    }

    #[test]
    fn index_is_bijective() {
        let idx = AugmentedStateIndex::new(&grid_schema(2), 2).unwrap();
        assert_eq!(idx.n_states(), 9 * 2 * 4);
        let mut seen = std::collections::HashSet::new();
        for x in 0..3 {
            for y in 0..3 {
                for r in 0..2 {
                    for b0 in 0..2u64 {
                        for b1 in 0..2u64 {
                            let obs = vec![
                                vec![x as f64, y as f64],
                                vec![r as f64],
                                vec![b0 as f64],
                                vec![b1 as f64],
                            ];
                            let id = idx.encode_augmented(&obs).unwrap();
                            assert!(id < idx.n_states());
                            assert!(seen.insert(id), "duplicate id {}", id);
                        }
                    }
                }
            }
        }
        assert_eq!(seen.len() as u64, idx.n_states());
    }

    #[test]
    fn encode_agrees_with_encode_augmented() {
        let idx = AugmentedStateIndex::new(&grid_schema(2), 2).unwrap();
        let obs = vec![vec![1.0, 2.0], vec![0.0]];
        let mut mem = MemoryState::zeros(2);
        let via_state = idx.encode(&obs, &mem).unwrap();
        let full = vec![vec![1.0, 2.0], vec![0.0], vec![0.0], vec![0.0]];
        assert_eq!(via_state, idx.encode_augmented(&full).unwrap());

        mem = crate::memory::memory_step(
            &mem,
            &obs,
            &[
                crate::memory::MemoryUnit {
                    id: 0,
                    event: crate::infotheory::BallEvent {
                        attr: 0,
                        center: vec![1.0, 2.0],
                        radius: 0.1,
                    },
                },
                crate::memory::MemoryUnit {
                    id: 1,
                    event: crate::infotheory::BallEvent {
                        attr: 0,
                        center: vec![0.0, 0.0],
                        radius: 0.1,
                    },
                },
            ],
        )
        .unwrap();
        let full = vec![vec![1.0, 2.0], vec![0.0], vec![1.0], vec![0.0]];
        assert_eq!(
            idx.encode(&obs, &mem).unwrap(),
            idx.encode_augmented(&full).unwrap()
        );
    }

    #[test]
    fn rejects_continuous_attributes() {
        let mut s = grid_schema(0);
        s.attributes[0].kind = AttributeKind::Continuous;
        assert!(AugmentedStateIndex::new(&s, 0).is_err());
    }

    fn chain_model(d: usize, reward: f64) -> TabularModel {
        // States 0..d move deterministically forward; entering state d pays
        // `reward`; state d is absorbing with reward 0.
        let states: Vec<u64> = (0..=d as u64).collect();
        let mut entries = BTreeMap::new();
        for s in 0..d as u64 {
            let r = if s + 1 == d as u64 { reward } else { 0.0 };
            entries.insert(
                s,
                vec![Some(TransitionStats {
                    visits: 1,
                    next: vec![(s + 1, 1.0)],
                    rewards: vec![(r, 1.0)],
                    mean_reward: r,
                })],
            );
        }
        entries.insert(
            d as u64,
            vec![Some(TransitionStats {
                visits: 1,
                next: vec![(d as u64, 1.0)],
                rewards: vec![(0.0, 1.0)],
                mean_reward: 0.0,
            })],
        );
        TabularModel::from_parts(1, states, entries).unwrap()
    }

    #[test]
    fn chain_value_matches_closed_form() {
        let d = 3;
        let m = chain_model(d, 1.0);
        let (v, _) = value_iteration(&m, 0.99, 1e-12).unwrap();
        let expected = 0.99f64.powi(d as i32 - 1);
        assert!((v.values[0] - expected).abs() < 1e-9, "{} vs {}", v.values[0], expected);
        // Absorbing terminal keeps value 0.
        assert!(v.values[d].abs() < 1e-9);
    }

    #[test]
    fn zero_rewards_converge_in_one_sweep() {
        let m = chain_model(3, 0.0);
        let (v, _) = value_iteration(&m, 0.99, 1e-8).unwrap();
        assert_eq!(v.sweeps, 1);
        assert_eq!(v.residual, 0.0);
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn myopic_limit_maximizes_immediate_reward() {
        let states = vec![0u64];
        let mut entries = BTreeMap::new();
        entries.insert(
            0,
            vec![
                Some(TransitionStats {
                    visits: 1,
                    next: vec![(0, 1.0)],
                    rewards: vec![(0.25, 1.0)],
                    mean_reward: 0.25,
                }),
                Some(TransitionStats {
                    visits: 1,
                    next: vec![(0, 1.0)],
                    rewards: vec![(0.75, 1.0)],
                    mean_reward: 0.75,
                }),
            ],
        );
        let m = TabularModel::from_parts(2, states, entries).unwrap();
        let (v, p) = value_iteration(&m, 0.0, 1e-12).unwrap();
        assert!((v.values[0] - 0.75).abs() < 1e-12);
        assert_eq!(p.actions[0], 1);
    }

    #[test]
    fn residuals_contract_at_gamma() {
        let m = chain_model(6, 1.0);
        let (v, _) = value_iteration(&m, 0.9, 1e-10).unwrap();
        for w in v.residual_history.windows(2) {
            if w[0] > 1e-12 {
                assert!(w[1] <= 0.9 * w[0] + 1e-12, "{} then {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn policy_invariant_under_reward_scaling() {
        let m = chain_model(4, 1.0);
        let scaled = {
            let mut entries = m.entries.clone();
            for row in entries.values_mut() {
                for stats in row.iter_mut().flatten() {
                    stats.mean_reward *= 10.0;
                    for r in stats.rewards.iter_mut() {
                        r.0 *= 10.0;
                    }
                }
            }
            TabularModel::from_parts(m.n_actions, m.states.clone(), entries).unwrap()
        };
        let (_, p1) = value_iteration(&m, 0.95, 1e-10).unwrap();
        let (_, p2) = value_iteration(&scaled, 0.95, 1e-10).unwrap();
        assert_eq!(p1.actions, p2.actions);
    }

    #[test]
    fn unvisited_states_self_loop_with_zero_value() {
        let states = vec![0u64, 1, 2];
        let mut entries = BTreeMap::new();
        entries.insert(
            0,
            vec![Some(TransitionStats {
                visits: 1,
                next: vec![(1, 1.0)],
                rewards: vec![(1.0, 1.0)],
                mean_reward: 1.0,
            })],
        );
        let m = TabularModel::from_parts(1, states, entries).unwrap();
        let (v, p) = value_iteration(&m, 0.9, 1e-10).unwrap();
        assert!(v.values[2].abs() < 1e-12);
        assert_eq!(p.actions[2], 0);
        assert!((v.values[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ties_pick_lowest_action() {
        let states = vec![0u64];
        let stats = TransitionStats {
            visits: 1,
            next: vec![(0, 1.0)],
            rewards: vec![(0.5, 1.0)],
            mean_reward: 0.5,
        };
        let mut entries = BTreeMap::new();
        entries.insert(0, vec![Some(stats.clone()), Some(stats.clone()), Some(stats)]);
        let m = TabularModel::from_parts(3, states, entries).unwrap();
        let (_, p) = value_iteration(&m, 0.5, 1e-10).unwrap();
        assert_eq!(p.actions[0], 0);
    }

    #[test]
    fn reward_prediction_takes_argmax_with_low_ties() {
        let states = vec![0u64];
        let mut entries = BTreeMap::new();
        entries.insert(
            0,
            vec![
                Some(TransitionStats {
                    visits: 4,
                    next: vec![(0, 1.0)],
                    rewards: vec![(0.0, 0.25), (1.0, 0.75)],
                    mean_reward: 0.75,
                }),
                Some(TransitionStats {
                    visits: 2,
                    next: vec![(0, 1.0)],
                    rewards: vec![(0.0, 0.5), (1.0, 0.5)],
                    mean_reward: 0.5,
                }),
            ],
        );
        let m = TabularModel::from_parts(2, states, entries).unwrap();
        assert_eq!(predict_reward_class(&m, 0, 0), 1.0);
        // Exact tie prefers the smaller reward value.
        assert_eq!(predict_reward_class(&m, 0, 1), 0.0);
        // Unvisited pair predicts 0.
        assert_eq!(predict_reward_class(&m, 0, 5), 0.0);
    }

    #[test]
    fn nonconvergent_guard_reports_residual() {
        // gamma close to 1 with a tiny tolerance must still converge thanks
        // to the contraction; force the cap with an absurd tolerance of 0
        // being rejected instead.
        assert!(value_iteration(&chain_model(2, 1.0), 0.99, 0.0).is_err());
        assert!(value_iteration(&chain_model(2, 1.0), 1.0, 1e-8).is_err());
    }

    #[test]
    fn model_validation_catches_bad_distributions() {
        let states = vec![0u64];
        let mut entries = BTreeMap::new();
        entries.insert(
            0,
            vec![Some(TransitionStats {
                visits: 1,
                next: vec![(0, 0.5)],
                rewards: vec![(0.0, 1.0)],
                mean_reward: 0.0,
            })],
        );
        assert!(TabularModel::from_parts(1, states, entries).is_err());
    }

    #[test]
    fn fit_model_counts_deterministic_motion() {
        use crate::trajectory::Step;
        let schema = grid_schema(0);
        // Two episodes walking right along y=0; reward on reaching (2,0).
        let ep = || -> Vec<Step> {
            (0..4)
                .map(|t| {
                    let x = (t as f64).min(2.0);
                    let r = if t == 2 { 1.0 } else { 0.0 };
                    Step {
                        obs: vec![vec![x, 0.0], vec![r]],
                        action: 0,
                    }
                })
                .collect()
        };
        let d = Dataset::new(schema.clone(), vec![ep(), ep()]).unwrap();
        let idx = AugmentedStateIndex::new(&schema, 0).unwrap();
        let m = fit_model(&d, &idx).unwrap();
        // Every visited pair is deterministic: point-mass next distribution.
        for row in m.entries.values() {
            for stats in row.iter().flatten() {
                assert_eq!(stats.next.len(), 1);
                assert_eq!(stats.next[0].1, 1.0);
            }
        }
        // Refitting the same data produces the identical model.
        let d2 = Dataset::new(schema, vec![ep(), ep()]).unwrap();
        let m2 = fit_model(&d2, &idx).unwrap();
        assert_eq!(m, m2);
    }
}
