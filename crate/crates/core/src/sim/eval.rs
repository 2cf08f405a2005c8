//! Policy rollouts, reward-prediction metrics, and the history-stacking
//! baseline. Agents never see ground-truth latches: memory bits are
//! maintained from observations alone via `memory_step`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{env_step, LatchTask, TaskConfig, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::memory::{augmented_schema, memory_step, MemoryState, MemoryUnit};
use crate::planner::{predict_reward_class, AugmentedStateIndex, PolicyTable, TabularModel, TransitionStats};
use crate::trajectory::{AttributeSchema, Dataset};
use crate::util::derive_seed;

/// Keeps evaluation RNG streams disjoint from collection streams.
const EVAL_SALT: u64 = 0x6576_616c;
const RANDOM_POLICY_SALT: u64 = 0x726e_6400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub total_reward: f64,
    pub steps: usize,
    pub success: bool,
    pub trace: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub mean_steps: f64,
}

impl EvalSummary {
    pub fn from_results(results: &[EpisodeResult]) -> Self {
        let n = results.len().max(1) as f64;
        EvalSummary {
            episodes: results.len(),
            mean_reward: results.iter().map(|r| r.total_reward).sum::<f64>() / n,
            success_rate: results.iter().filter(|r| r.success).count() as f64 / n,
            mean_steps: results.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        }
    }
}

/// Agent-side belief over the hidden part of the state: either latch bits
/// from memory units or a sliding window of (cell, action) history.
trait StateTracker {
    fn reset(&mut self);
    fn state_id(&mut self, obs: &[Vec<f64>]) -> Result<u64>;
    fn advance(&mut self, obs: &[Vec<f64>], action: usize) -> Result<()>;
}

struct MemoryTracker<'a> {
    idx: &'a AugmentedStateIndex,
    units: &'a [MemoryUnit],
    state: MemoryState,
}

impl<'a> MemoryTracker<'a> {
    fn new(idx: &'a AugmentedStateIndex, units: &'a [MemoryUnit]) -> Self {
        MemoryTracker {
            idx,
            units,
            state: MemoryState::zeros(units.len()),
        }
    }
}

impl StateTracker for MemoryTracker<'_> {
    fn reset(&mut self) {
        self.state = MemoryState::zeros(self.units.len());
    }

    fn state_id(&mut self, obs: &[Vec<f64>]) -> Result<u64> {
        self.idx.encode(obs, &self.state)
    }

    fn advance(&mut self, obs: &[Vec<f64>], _action: usize) -> Result<()> {
        self.state = memory_step(&self.state, obs, self.units)?;
        Ok(())
    }
}

/// Mixed-radix packing of (cell, last `window` (cell, action) pairs) into a
/// flat id. Token 0 marks an empty slot at the start of an episode; the
/// newest pair occupies the least significant slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedStateIndex {
    cells: AugmentedStateIndex,
    window: usize,
    n_actions: usize,
    radix: u64,
}

impl StackedStateIndex {
    pub fn new(schema: &AttributeSchema, window: usize) -> Result<Self> {
        let cells = AugmentedStateIndex::new(schema, 0)?;
        let radix = cells
            .cell_count()
            .checked_mul(schema.action_count as u64)
            .and_then(|x| x.checked_add(1))
            .ok_or_else(|| Error::Config("history token space overflows".into()))?;
        let mut n_states = cells.cell_count();
        for _ in 0..window {
            n_states = n_states
                .checked_mul(radix)
                .ok_or_else(|| Error::Config(format!("window {} overflows the state id space", window)))?;
        }
        Ok(StackedStateIndex {
            cells,
            window,
            n_actions: schema.action_count,
            radix,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn cell_of(&self, obs: &[Vec<f64>]) -> Result<u64> {
        self.cells.encode_cell(obs)
    }

    /// `hist` is oldest-first and holds at most `window` pairs; shorter
    /// histories are left-padded with the empty token.
    pub fn encode(&self, cell: u64, hist: &[(u64, usize)]) -> Result<u64> {
        if hist.len() > self.window {
            return Err(Error::Index(format!(
                "history of {} pairs exceeds window {}",
                hist.len(),
                self.window
            )));
        }
        let mut id = cell;
        let pad = self.window - hist.len();
        for slot in 0..self.window {
            let token = if slot < pad {
                0
            } else {
                let (c, a) = hist[slot - pad];
                if c >= self.cells.cell_count() || a >= self.n_actions {
                    return Err(Error::Index(format!("history pair ({}, {}) out of range", c, a)));
                }
                1 + c * self.n_actions as u64 + a as u64
            };
            id = id * self.radix + token;
        }
        Ok(id)
    }
}

struct StackingTracker<'a> {
    idx: &'a StackedStateIndex,
    hist: Vec<(u64, usize)>,
}

impl<'a> StackingTracker<'a> {
    fn new(idx: &'a StackedStateIndex) -> Self {
        StackingTracker {
            idx,
            hist: Vec::with_capacity(idx.window + 1),
        }
    }
}

impl StateTracker for StackingTracker<'_> {
    fn reset(&mut self) {
        self.hist.clear();
    }

    fn state_id(&mut self, obs: &[Vec<f64>]) -> Result<u64> {
        let cell = self.idx.cell_of(obs)?;
        self.idx.encode(cell, &self.hist)
    }

    fn advance(&mut self, obs: &[Vec<f64>], action: usize) -> Result<()> {
        let cell = self.idx.cell_of(obs)?;
        self.hist.push((cell, action));
        if self.hist.len() > self.idx.window {
            self.hist.remove(0);
        }
        Ok(())
    }
}

/// Where actions come from during a rollout.
trait ActionSource {
    fn begin_episode(&mut self, episode: usize) -> Result<()>;
    fn act(&mut self, obs: &[Vec<f64>]) -> Result<usize>;
}

struct PolicySource<'a, T: StateTracker> {
    pt: &'a PolicyTable,
    tracker: T,
}

impl<T: StateTracker> ActionSource for PolicySource<'_, T> {
    fn begin_episode(&mut self, _episode: usize) -> Result<()> {
        self.tracker.reset();
        Ok(())
    }

    fn act(&mut self, obs: &[Vec<f64>]) -> Result<usize> {
        let s = self.tracker.state_id(obs)?;
        let a = match self.pt.action(s) {
            Some(a) => a,
            None => {
                log::warn!("state {} missing from policy; falling back to action 0", s);
                0
            }
        };
        self.tracker.advance(obs, a)?;
        Ok(a)
    }
}

struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl ActionSource for RandomSource {
    fn begin_episode(&mut self, episode: usize) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            &[RANDOM_POLICY_SALT, episode as u64],
        ));
        Ok(())
    }

    fn act(&mut self, _obs: &[Vec<f64>]) -> Result<usize> {
        Ok(self.rng.random_range(0..ACTION_COUNT))
    }
}

fn run_episodes(
    task: &LatchTask,
    episodes: usize,
    seed: u64,
    src: &mut dyn ActionSource,
) -> Result<Vec<EpisodeResult>> {
    if episodes == 0 {
        return Err(Error::Config("need at least one evaluation episode".into()));
    }
    let mut results = Vec::with_capacity(episodes);
    for l in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[EVAL_SALT, l as u64]));
        let mut state = task.reset(task.random_start(&mut rng))?;
        src.begin_episode(l)?;
        let mut total = 0.0;
        let mut last_reward = 0.0;
        let mut steps = 0;
        let mut trace = vec![state.pos.clone()];
        for _ in 0..task.horizon() {
            if state.done {
                break;
            }
            let obs = vec![
                state.pos.iter().map(|&c| c as f64).collect::<Vec<f64>>(),
                vec![last_reward],
            ];
            let a = src.act(&obs)?;
            let (next, _, r) = env_step(task, &state, a)?;
            total += r;
            last_reward = r;
            state = next;
            steps += 1;
            trace.push(state.pos.clone());
        }
        results.push(EpisodeResult {
            total_reward: total,
            steps,
            success: total >= 1.0,
            trace,
        });
    }
    Ok(results)
}

/// Roll the greedy policy with agent-side latch memory. Start cells and any
/// stochasticity are seeded from the task seed on streams disjoint from
/// data collection.
pub fn evaluate_policy(
    cfg: &TaskConfig,
    pt: &PolicyTable,
    units: &[MemoryUnit],
    episodes: usize,
) -> Result<EvalSummary> {
    let task = cfg.engine()?;
    let schema = augmented_schema(&task.schema(), units)?;
    let idx = AugmentedStateIndex::new(&schema, units.len())?;
    let mut src = PolicySource {
        pt,
        tracker: MemoryTracker::new(&idx, units),
    };
    let results = run_episodes(&task, episodes, cfg.seed(), &mut src)?;
    Ok(EvalSummary::from_results(&results))
}

/// Same rollout with a sliding-window history state instead of memory bits.
pub fn evaluate_policy_stacking(
    cfg: &TaskConfig,
    pt: &PolicyTable,
    idx: &StackedStateIndex,
    episodes: usize,
) -> Result<EvalSummary> {
    let task = cfg.engine()?;
    let mut src = PolicySource {
        pt,
        tracker: StackingTracker::new(idx),
    };
    let results = run_episodes(&task, episodes, cfg.seed(), &mut src)?;
    Ok(EvalSummary::from_results(&results))
}

/// Uniform-random baseline through the same rollout machinery.
pub fn evaluate_random(cfg: &TaskConfig, episodes: usize) -> Result<EvalSummary> {
    let task = cfg.engine()?;
    let mut src = RandomSource::new(cfg.seed());
    let results = run_episodes(&task, episodes, cfg.seed(), &mut src)?;
    Ok(EvalSummary::from_results(&results))
}

/// Recall and precision for one reward value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub value: f64,
    pub actual_count: u64,
    pub predicted_count: u64,
    pub true_positives: u64,
    /// `None` when the class never occurs in the test data.
    pub recall: Option<f64>,
    /// `None` when the model never predicts the class.
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMetrics {
    pub classes: Vec<ClassMetric>,
    pub steps: u64,
}

impl RewardMetrics {
    pub fn class(&self, value: f64) -> Option<&ClassMetric> {
        self.classes.iter().find(|c| c.value == value)
    }
}

fn metrics_with(
    mdl: &TabularModel,
    tracker: &mut dyn StateTracker,
    test: &Dataset,
) -> Result<RewardMetrics> {
    test.validate()?;
    if test.horizon() == 0 {
        return Err(Error::EmptyDataset("no transitions to score".into()));
    }
    // value bits -> (actual, predicted, true positives)
    let mut counts: BTreeMap<u64, (u64, u64, u64)> = BTreeMap::new();
    counts.insert(0.0f64.to_bits(), (0, 0, 0));
    counts.insert(1.0f64.to_bits(), (0, 0, 0));
    let mut steps = 0u64;
    for ep in &test.episodes {
        tracker.reset();
        for t in 0..test.horizon() {
            let s = tracker.state_id(&ep[t].obs)?;
            let pred = predict_reward_class(mdl, s, ep[t].action);
            let actual = ep[t + 1].obs[test.schema.reward_attr][0];
            let a = counts.entry(actual.to_bits()).or_insert((0, 0, 0));
            a.0 += 1;
            let p = counts.entry(pred.to_bits()).or_insert((0, 0, 0));
            p.1 += 1;
            if pred == actual {
                counts.get_mut(&actual.to_bits()).unwrap().2 += 1;
            }
            tracker.advance(&ep[t].obs, ep[t].action)?;
            steps += 1;
        }
    }
    let mut classes: Vec<ClassMetric> = counts
        .into_iter()
        .map(|(bits, (actual, predicted, tp))| ClassMetric {
            value: f64::from_bits(bits),
            actual_count: actual,
            predicted_count: predicted,
            true_positives: tp,
            recall: (actual > 0).then(|| tp as f64 / actual as f64),
            precision: (predicted > 0).then(|| tp as f64 / predicted as f64),
        })
        .collect();
    classes.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(RewardMetrics { classes, steps })
}

/// Score next-reward predictions over a held-out dataset, maintaining
/// memory bits from the test observations exactly as an agent would.
pub fn reward_metrics(
    mdl: &TabularModel,
    idx: &AugmentedStateIndex,
    units: &[MemoryUnit],
    test: &Dataset,
) -> Result<RewardMetrics> {
    if idx.mem_count() != units.len() {
        return Err(Error::DimensionMismatch {
            expected: idx.mem_count(),
            got: units.len(),
        });
    }
    let mut tracker = MemoryTracker::new(idx, units);
    metrics_with(mdl, &mut tracker, test)
}

/// Reward metrics for a history-stacking model.
pub fn stacking_reward_metrics(
    mdl: &TabularModel,
    idx: &StackedStateIndex,
    test: &Dataset,
) -> Result<RewardMetrics> {
    let mut tracker = StackingTracker::new(idx);
    metrics_with(mdl, &mut tracker, test)
}

/// Fit a frequency model over history-stacked states. The support is sparse:
/// only states reached by the data (and their successors) are enumerated.
pub fn history_stacking_model(
    d: &Dataset,
    window: usize,
    idx: &StackedStateIndex,
) -> Result<TabularModel> {
    if window != idx.window() {
        return Err(Error::Config(format!(
            "window {} does not match the index window {}",
            window,
            idx.window()
        )));
    }
    d.validate()?;
    if d.horizon() == 0 {
        return Err(Error::EmptyDataset("no transitions to fit".into()));
    }

    let mut next_counts: BTreeMap<(u64, u16), BTreeMap<u64, u64>> = BTreeMap::new();
    let mut reward_counts: BTreeMap<(u64, u16), BTreeMap<u64, u64>> = BTreeMap::new();
    let mut support: BTreeSet<u64> = BTreeSet::new();
    let mut tracker = StackingTracker::new(idx);
    for ep in &d.episodes {
        tracker.reset();
        for t in 0..d.horizon() {
            let s = tracker.state_id(&ep[t].obs)?;
            tracker.advance(&ep[t].obs, ep[t].action)?;
            let s2 = tracker.state_id(&ep[t + 1].obs)?;
            let a = ep[t].action as u16;
            let r = ep[t + 1].obs[d.schema.reward_attr][0];
            support.insert(s);
            support.insert(s2);
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

    TabularModel::from_parts(d.schema.action_count, support.into_iter().collect(), entries)
}
