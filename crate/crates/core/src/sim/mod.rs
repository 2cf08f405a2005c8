//! Built-in benchmark environments with hidden latch state.
//!
//! Both tasks are gridworlds whose reward depends on unobservable latches:
//! cells that, once visited, permanently arm the reward. The painting task
//! has one trigger (a paint bucket) and rewards entering the canvas cell
//! while loaded; the tire task has four triggers (lug nuts) and rewards
//! entering the hub center once all four have been visited. Observations are
//! the agent position and the last reward; the latches stay hidden.

pub mod eval;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{AttributeKind, AttributeSchema, AttributeSpec, Dataset, Step};
use crate::util::derive_seed;

pub const ACTION_COUNT: usize = 6;

/// Observation attribute indices shared by both tasks.
pub const POSITION_ATTR: usize = 0;
pub const REWARD_ATTR: usize = 1;

const PLACEMENT_SALT: u64 = 0x6c61_7463_685f_7631;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaintingConfig {
    pub dims: [usize; 3],
    pub bucket: [i64; 3],
    pub canvas: [i64; 3],
    pub horizon: usize,
    pub seed: u64,
}

impl Default for PaintingConfig {
    fn default() -> Self {
        PaintingConfig {
            dims: [5, 5, 5],
            bucket: [0, 0, 0],
            canvas: [4, 4, 4],
            horizon: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TireConfig {
    pub dims: [usize; 2],
    pub lugs: [[i64; 2]; 4],
    pub center: [i64; 2],
    pub horizon: usize,
    pub terminal_on_success: bool,
    pub seed: u64,
}

impl Default for TireConfig {
    fn default() -> Self {
        TireConfig {
            dims: [5, 5],
            lugs: [[1, 1], [1, 3], [3, 1], [3, 3]],
            center: [2, 2],
            horizon: 100,
            terminal_on_success: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    Painting(PaintingConfig),
    Tire(TireConfig),
}

impl TaskConfig {
    pub fn seed(&self) -> u64 {
        match self {
            TaskConfig::Painting(c) => c.seed,
            TaskConfig::Tire(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            TaskConfig::Painting(c) => c.seed = seed,
            TaskConfig::Tire(c) => c.seed = seed,
        }
    }

    pub fn engine(&self) -> Result<LatchTask> {
        match self {
            TaskConfig::Painting(c) => LatchTask::new(
                c.dims.to_vec(),
                vec![c.bucket.to_vec()],
                c.canvas.to_vec(),
                c.horizon,
                false,
                c.seed,
            ),
            TaskConfig::Tire(c) => LatchTask::new(
                c.dims.to_vec(),
                c.lugs.iter().map(|l| l.to_vec()).collect(),
                c.center.to_vec(),
                c.horizon,
                c.terminal_on_success,
                c.seed,
            ),
        }
    }
}

/// Shared engine: a clamped gridworld where visiting each trigger cell arms
/// one hidden latch and entering the goal cell pays out once all latches are
/// armed.
#[derive(Debug, Clone)]
pub struct LatchTask {
    dims: Vec<i64>,
    triggers: Vec<Vec<i64>>,
    goal: Vec<i64>,
    horizon: usize,
    terminal_on_success: bool,
    seed: u64,
}

impl LatchTask {
    pub fn new(
        dims: Vec<usize>,
        triggers: Vec<Vec<i64>>,
        goal: Vec<i64>,
        horizon: usize,
        terminal_on_success: bool,
        seed: u64,
    ) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("grid dims must be positive".into()));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let dims: Vec<i64> = dims.iter().map(|&d| d as i64).collect();
        let in_grid = |cell: &[i64]| {
            cell.len() == dims.len() && cell.iter().zip(&dims) .all(|(&c, &d)| c >= 0 && c < d)
        };
        if !in_grid(&goal) {
            return Err(Error::Config("goal cell outside grid".into()));
        }
        if triggers.is_empty() {
            return Err(Error::Config("need at least one trigger cell".into()));
        }
        for t in &triggers {
            if !in_grid(t) {
                return Err(Error::Config("trigger cell outside grid".into()));
            }
            if *t == goal {
                return Err(Error::Config("trigger coincides with goal".into()));
            }
        }
        Ok(LatchTask {
            dims,
            triggers,
            goal,
            horizon,
            terminal_on_success,
            seed,
        })
    }

    pub fn dims(&self) -> &[i64] {
        &self.dims
    }

    pub fn triggers(&self) -> &[Vec<i64>] {
        &self.triggers
    }

    pub fn goal(&self) -> &[i64] {
        &self.goal
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn terminal_on_success(&self) -> bool {
        self.terminal_on_success
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn schema(&self) -> AttributeSchema {
        AttributeSchema {
            attributes: vec![
                AttributeSpec {
                    name: "position".into(),
                    dim: self.dims.len(),
                    lower: vec![0.0; self.dims.len()],
                    upper: self.dims.iter().map(|&d| (d - 1) as f64).collect(),
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
            action_count: ACTION_COUNT,
            reward_attr: REWARD_ATTR,
        }
    }

    pub fn reset(&self, start: Vec<i64>) -> Result<EnvState> {
        if start.len() != self.dims.len()
            || start.iter().zip(&self.dims).any(|(&c, &d)| c < 0 || c >= d)
        {
            return Err(Error::Config(format!("start cell {:?} outside grid", start)));
        }
        Ok(EnvState {
            pos: start,
            latches: vec![false; self.triggers.len()],
            step: 0,
            done: false,
        })
    }

    pub fn random_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        self.dims.iter().map(|&d| rng.random_range(0..d)).collect()
    }

    fn position_obs(&self, pos: &[i64]) -> Vec<f64> {
        pos.iter().map(|&c| c as f64).collect()
    }
}

/// Full environment state. Latches are ground truth hidden from agents;
/// they are exposed read-only for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    pub pos: Vec<i64>,
    latches: Vec<bool>,
    pub step: usize,
    pub done: bool,
}

impl EnvState {
    pub fn hidden_latches(&self) -> &[bool] {
        &self.latches
    }
}

/// Advance one step. Actions 2k/2k+1 move +1/-1 along axis k, clamped at the
/// grid edge; axes beyond the grid's rank leave the position unchanged.
/// Latches arm from the position *before* the move, and the reward pays on
/// the transition that enters the goal with every latch armed.
pub fn env_step(task: &LatchTask, state: &EnvState, action: usize) -> Result<(EnvState, Vec<f64>, f64)> {
    if state.done {
        return Err(Error::SteppedAfterDone);
    }
    if action >= ACTION_COUNT {
        return Err(Error::Index(format!("action {} of {}", action, ACTION_COUNT)));
    }
    let mut latches = state.latches.clone();
    for (k, trig) in task.triggers.iter().enumerate() {
        latches[k] = latches[k] || state.pos == *trig;
    }

    let mut pos = state.pos.clone();
    let axis = action / 2;
    if axis < pos.len() {
        let delta = if action % 2 == 0 { 1 } else { -1 };
        pos[axis] = (pos[axis] + delta).clamp(0, task.dims[axis] - 1);
    }

    let entered_goal = state.pos != task.goal && pos == task.goal;
    let armed = latches.iter().all(|&b| b);
    let reward = if entered_goal && armed { 1.0 } else { 0.0 };
    let done = task.terminal_on_success && reward > 0.0;

    let obs = task.position_obs(&pos);
    Ok((
        EnvState {
            pos,
            latches,
            step: state.step + 1,
            done,
        },
        obs,
        reward,
    ))
}

/// Roll `episodes` uniform-random episodes of `horizon` transitions each and
/// pack them as a dataset. Each step records (position, last reward) and the
/// action sampled there. Episodes that terminate early are padded with
/// frozen absorbing steps so every episode has the same length; the recorded
/// padding action is a stand-still action, keeping the padded rows consistent
/// with the live dynamics. Grids of rank 3 have no stand-still action, so
/// their padding stays ambiguous; neither built-in terminal task has rank 3.
pub fn collect_random(cfg: &TaskConfig, episodes: usize, seed: u64) -> Result<Dataset> {
    let task = cfg.engine()?;
    if episodes == 0 {
        return Err(Error::Config("need at least one episode".into()));
    }
    let pad_action = (2 * task.dims.len()).min(ACTION_COUNT - 1);
    let schema = task.schema();
    let mut eps = Vec::with_capacity(episodes);
    for l in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[l as u64]));
        let mut state = task.reset(task.random_start(&mut rng))?;
        let mut reward = 0.0;
        let mut steps = Vec::with_capacity(task.horizon + 1);
        for _ in 0..=task.horizon {
            if state.done {
                steps.push(Step {
                    obs: vec![task.position_obs(&state.pos), vec![reward]],
                    action: pad_action,
                });
                reward = 0.0;
            } else {
                let action = rng.random_range(0..ACTION_COUNT);
                steps.push(Step {
                    obs: vec![task.position_obs(&state.pos), vec![reward]],
                    action,
                });
                let (next, _, r) = env_step(&task, &state, action)?;
                state = next;
                reward = r;
            }
        }
        eps.push(steps);
    }
    Dataset::new(schema, eps)
}

/// Deterministic trigger/goal placement variants. Index 0 is the canonical
/// layout; higher indices sample fresh geometry with spacing constraints,
/// stable across runs and independent of the run seed.
pub fn painting_placement(index: u32) -> PaintingConfig {
    let mut cfg = PaintingConfig::default();
    if index == 0 {
        return cfg;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(PLACEMENT_SALT, &[1, index as u64]));
    loop {
        let cell = |rng: &mut ChaCha8Rng| {
            [
                rng.random_range(0..5i64),
                rng.random_range(0..5i64),
                rng.random_range(0..5i64),
            ]
        };
        let bucket = cell(&mut rng);
        let canvas = cell(&mut rng);
        let manhattan: i64 = bucket
            .iter()
            .zip(&canvas)
            .map(|(a, b)| (a - b).abs())
            .sum();
        if manhattan >= 3 {
            cfg.bucket = bucket;
            cfg.canvas = canvas;
            return cfg;
        }
    }
}

/// Lug rings around a hub cell. Placement 0 is the canonical geometry;
/// higher indices pick seeded distinct translations and rotations of it.
/// Lugs stay adjacent to the hub, so a random walk keeps producing reward
/// events at every placement instead of starving the rarer ones.
pub fn tire_placement(index: u32) -> TireConfig {
    let mut cfg = TireConfig::default();
    if index == 0 {
        return cfg;
    }
    let mut variants = Vec::new();
    for cx in 1..=3i64 {
        for cy in 1..=3i64 {
            for diagonal in [true, false] {
                if (cx, cy, diagonal) != (2, 2, true) {
                    variants.push((cx, cy, diagonal));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(PLACEMENT_SALT, &[2]));
    for i in (1..variants.len()).rev() {
        let j = rng.random_range(0..=i);
        variants.swap(i, j);
    }
    let (cx, cy, diagonal) = variants[(index as usize - 1) % variants.len()];
    cfg.center = [cx, cy];
    cfg.lugs = if diagonal {
        [[cx - 1, cy - 1], [cx - 1, cy + 1], [cx + 1, cy - 1], [cx + 1, cy + 1]]
    } else {
        [[cx - 1, cy], [cx, cy - 1], [cx, cy + 1], [cx + 1, cy]]
    };
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{memory_step, MemoryState, MemoryUnit};
    use crate::infotheory::BallEvent;

    fn painting() -> LatchTask {
        TaskConfig::Painting(PaintingConfig::default()).engine().unwrap()
    }

    fn tire() -> LatchTask {
        TaskConfig::Tire(TireConfig::default()).engine().unwrap()
    }

    #[test]
    fn moves_clamp_at_edges() {
        let task = painting();
        let s = task.reset(vec![0, 0, 0]).unwrap();
        let (s1, obs, r) = env_step(&task, &s, 1).unwrap();
        assert_eq!(s1.pos, vec![0, 0, 0]);
        assert_eq!(obs, vec![0.0, 0.0, 0.0]);
        assert_eq!(r, 0.0);
        let (s2, _, _) = env_step(&task, &s1, 0).unwrap();
        assert_eq!(s2.pos, vec![1, 0, 0]);
    }

    #[test]
    fn reward_requires_prior_trigger_visit() {
        let task = painting();
        // Start next to the canvas, never touching the bucket.
        let s = task.reset(vec![3, 4, 4]).unwrap();
        let (s1, _, r) = env_step(&task, &s, 0).unwrap();
        assert_eq!(s1.pos, vec![4, 4, 4]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn reward_pays_on_entry_when_loaded() {
        let task = painting();
        let mut s = task.reset(vec![0, 0, 0]).unwrap();
        // Leave the bucket cell (arming the latch), walk to the canvas.
        let path = [0, 0, 0, 0, 2, 2, 2, 2, 4, 4, 4, 4];
        let mut last_r = 0.0;
        for &a in &path {
            let (next, _, r) = env_step(&task, &s, a).unwrap();
            s = next;
            last_r = r;
        }
        assert_eq!(s.pos, vec![4, 4, 4]);
        assert_eq!(last_r, 1.0);
        // Staying on the canvas earns nothing; re-entering earns again.
        let (s2, _, r2) = env_step(&task, &s, 0).unwrap();
        assert_eq!(s2.pos, vec![4, 4, 4]);
        assert_eq!(r2, 0.0);
        let (s3, _, _) = env_step(&task, &s2, 1).unwrap();
        let (s4, _, r4) = env_step(&task, &s3, 0).unwrap();
        assert_eq!(s4.pos, vec![4, 4, 4]);
        assert_eq!(r4, 1.0);
    }

    #[test]
    fn latch_arms_from_departure_not_arrival() {
        let task = painting();
        let s = task.reset(vec![1, 0, 0]).unwrap();
        // Step onto the bucket: latch not armed yet during this transition.
        let (s1, _, _) = env_step(&task, &s, 1).unwrap();
        assert_eq!(s1.pos, vec![0, 0, 0]);
        assert!(!s1.hidden_latches()[0]);
        // Any step from the bucket cell arms it.
        let (s2, _, _) = env_step(&task, &s1, 0).unwrap();
        assert!(s2.hidden_latches()[0]);
    }

    #[test]
    fn tire_needs_all_four_lugs() {
        let task = tire();
        let mut s = task.reset(vec![1, 1]).unwrap();
        // Scripted tour over three lugs only:
        // (1,1) -> (1,2) -> (1,3) -> (2,3) -> (3,3) -> (3,2) -> (2,2).
        let tour = [2usize, 2, 0, 0, 3, 1];
        let mut rewards = Vec::new();
        for &a in &tour {
            let (next, _, r) = env_step(&task, &s, a).unwrap();
            rewards.push(r);
            s = next;
        }
        assert_eq!(s.pos, vec![2, 2]);
        // Only three lugs visited: the center entry pays nothing.
        assert_eq!(rewards.iter().sum::<f64>(), 0.0);
        assert!(!s.done);
    }

    #[test]
    fn tire_full_tour_pays_and_terminates() {
        let task = tire();
        let mut s = task.reset(vec![1, 1]).unwrap();
        // (1,1)->(1,2)->(1,3)->(2,3)->(3,3)->(3,2)->(3,1)->(2,1)->(2,2).
        let tour = [2usize, 2, 0, 0, 3, 3, 1, 2];
        let mut total = 0.0;
        for &a in &tour {
            let (next, _, r) = env_step(&task, &s, a).unwrap();
            total += r;
            s = next;
        }
        assert_eq!(s.pos, vec![2, 2]);
        assert_eq!(total, 1.0);
        assert!(s.done);
        assert!(env_step(&task, &s, 0).is_err());
    }

    #[test]
    fn z_actions_are_noops_on_flat_grids() {
        let task = tire();
        let s = task.reset(vec![2, 0]).unwrap();
        let (s1, _, _) = env_step(&task, &s, 4).unwrap();
        assert_eq!(s1.pos, vec![2, 0]);
        let (s2, _, _) = env_step(&task, &s1, 5).unwrap();
        assert_eq!(s2.pos, vec![2, 0]);
    }

    #[test]
    fn collected_data_matches_schema_and_replays() {
        let cfg = TaskConfig::Painting(PaintingConfig::default());
        let d = collect_random(&cfg, 20, 7).unwrap();
        assert_eq!(d.episode_count(), 20);
        assert_eq!(d.horizon(), 100);
        d.validate().unwrap();

        // Replay each episode through the engine: recorded rewards must
        // match the latch dynamics exactly.
        let task = cfg.engine().unwrap();
        for ep in &d.episodes {
            let start: Vec<i64> = ep[0].obs[0].iter().map(|&c| c as i64).collect();
            let mut s = task.reset(start).unwrap();
            assert_eq!(ep[0].obs[1][0], 0.0);
            for t in 0..d.horizon() {
                let (next, obs, r) = env_step(&task, &s, ep[t].action).unwrap();
                assert_eq!(obs, ep[t + 1].obs[0]);
                assert_eq!(r, ep[t + 1].obs[1][0]);
                s = next;
            }
        }
    }

    #[test]
    fn collect_is_deterministic_and_seed_sensitive() {
        let cfg = TaskConfig::Tire(TireConfig::default());
        let a = collect_random(&cfg, 10, 3).unwrap();
        let b = collect_random(&cfg, 10, 3).unwrap();
        let c = collect_random(&cfg, 10, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn terminated_episodes_pad_as_absorbing() {
        let mut tire_cfg = TireConfig::default();
        tire_cfg.horizon = 40;
        let cfg = TaskConfig::Tire(tire_cfg);
        let d = collect_random(&cfg, 300, 11).unwrap();
        let task = cfg.engine().unwrap();
        let mut saw_padding = false;
        for ep in &d.episodes {
            let mut rewarded = false;
            for t in 0..d.horizon() {
                if rewarded {
                    saw_padding = true;
                    assert_eq!(ep[t + 1].obs[0], ep[t].obs[0]);
                    assert_eq!(ep[t + 1].obs[1][0], 0.0);
                }
                if ep[t + 1].obs[1][0] > 0.0 {
                    rewarded = true;
                    let pos: Vec<i64> = ep[t + 1].obs[0].iter().map(|&c| c as i64).collect();
                    assert_eq!(pos, task.goal());
                }
            }
        }
        assert!(saw_padding, "no episode reached the goal; check the collector");
    }

    #[test]
    fn env_latches_equal_memory_units_over_triggers() {
        // Memory units whose balls sit exactly on the trigger cells track
        // the hidden latches one-for-one.
        let cfg = TaskConfig::Tire(TireConfig::default());
        let task = cfg.engine().unwrap();
        let units: Vec<MemoryUnit> = task
            .triggers()
            .iter()
            .enumerate()
            .map(|(k, t)| MemoryUnit {
                id: k,
                event: BallEvent {
                    attr: POSITION_ATTR,
                    center: t.iter().map(|&c| c as f64).collect(),
                    radius: 0.5,
                },
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let mut s = task.reset(task.random_start(&mut rng)).unwrap();
            let mut m = MemoryState::zeros(units.len());
            for _ in 0..task.horizon() {
                assert_eq!(s.hidden_latches().to_vec(), m.bits().to_vec());
                if s.done {
                    break;
                }
                let a = rng.random_range(0..ACTION_COUNT);
                let obs = vec![task.position_obs(&s.pos), vec![0.0]];
                m = memory_step(&m, &obs, &units).unwrap();
                let (next, _, _) = env_step(&task, &s, a).unwrap();
                s = next;
            }
        }
    }

    #[test]
    fn placements_are_stable_rings() {
        let mut seen = Vec::new();
        for p in 0..=4u32 {
            let a = painting_placement(p);
            assert_eq!(a, painting_placement(p));
            let manhattan: i64 = a
                .bucket
                .iter()
                .zip(&a.canvas)
                .map(|(x, y)| (x - y).abs())
                .sum();
            assert!(manhattan >= 3);

            let t = tire_placement(p);
            assert_eq!(t, tire_placement(p));
            // Lugs form a ring: distinct cells adjacent to the center,
            // in-grid, never on the center itself.
            for i in 0..4 {
                for j in i + 1..4 {
                    assert_ne!(t.lugs[i], t.lugs[j]);
                }
                assert_ne!(t.lugs[i], t.center);
                for k in 0..2 {
                    assert!((t.lugs[i][k] - t.center[k]).abs() <= 1);
                    assert!(t.lugs[i][k] >= 0 && t.lugs[i][k] < t.dims[k] as i64);
                }
            }
            assert!(!seen.contains(&t.lugs));
            seen.push(t.lugs);
        }
        assert_eq!(painting_placement(0), PaintingConfig::default());
        assert_eq!(tire_placement(0), TireConfig::default());
    }
}
