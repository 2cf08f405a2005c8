//! Experiment front end: collect, discover, plan, eval, report.
//!
//! Every subcommand reads one TOML config (flags override file values, the
//! `CMRL_SEED` env var overrides the file seed, an explicit `--seed` flag
//! overrides both) and emits files that embed the resolved config, so any
//! artifact can be traced back to the exact run that produced it.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::discovery::{discover, DiscoveryConfig, DiscoveryReport};
use crate::error::{Error, Result};
use crate::infotheory::BallEvent;
use crate::memory::{augment_dataset, MemoryUnit};
use crate::planner::{
    fit_model, value_iteration, AugmentedStateIndex, PolicyTable, TabularModel, ValueTable,
};
use crate::sim::eval::{
    evaluate_policy, evaluate_policy_stacking, history_stacking_model, reward_metrics,
    stacking_reward_metrics, EvalSummary, RewardMetrics, StackedStateIndex,
};
use crate::sim::{collect_random, painting_placement, tire_placement, TaskConfig};
use crate::trajectory::Dataset;
use crate::util::derive_seed;

/// Held-out test data comes from a stream disjoint from training collection.
const TEST_DATA_SALT: u64 = 0x7465_7374;

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Painting,
    Tire,
    Custom,
}

impl TaskKind {
    fn name(self) -> &'static str {
        match self {
            TaskKind::Painting => "painting",
            TaskKind::Tire => "tire",
            TaskKind::Custom => "custom",
        }
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Full,
    Markov,
    Stacking,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Markov => "markov",
            Method::Stacking => "stacking",
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSection {
    pub episodes: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        CollectSection { episodes: 500 }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSection {
    pub gamma: f64,
    pub tol: f64,
    pub method: Method,
    /// History length for the stacking baseline.
    pub window: usize,
}

impl Default for PlannerSection {
    fn default() -> Self {
        PlannerSection {
            gamma: 0.99,
            tol: 1e-8,
            method: Method::Full,
            window: 4,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Rollout episodes for success/reward statistics.
    pub episodes: usize,
    /// Episodes of fresh random data for reward-prediction metrics.
    pub test_episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes: 200,
            test_episodes: 200,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Training set sizes in episodes; the CSV also reports time-steps.
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub placements: Vec<u32>,
    pub methods: Vec<Method>,
    pub window: usize,
    pub eval_episodes: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            sizes: vec![100, 200, 500, 1000],
            seeds: vec![0, 1, 2],
            placements: vec![0, 1, 2, 3, 4],
            methods: vec![Method::Full, Method::Markov, Method::Stacking],
            window: 4,
            eval_episodes: 200,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskKind,
    /// Trigger/goal placement variant for the built-in tasks.
    pub placement: u32,
    /// Master seed; collection, discovery, and evaluation derive disjoint
    /// streams from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Explicit environment, required iff `task = "custom"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env: Option<TaskConfig>,
    pub collect: CollectSection,
    pub discovery: DiscoveryConfig,
    pub planner: PlannerSection,
    pub eval: EvalSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::Painting,
            placement: 0,
            seed: 0,
            out_dir: PathBuf::from("out"),
            env: None,
            collect: CollectSection::default(),
            discovery: DiscoveryConfig::default(),
            planner: PlannerSection::default(),
            eval: EvalSection::default(),
            report: ReportSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {}", p.display(), e))
                })?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("config parse: {}", e)))
            }
        }
    }

    /// The fully resolved environment for this run.
    pub fn task_config(&self) -> Result<TaskConfig> {
        let mut cfg = match self.task {
            TaskKind::Painting => {
                self.reject_env()?;
                TaskConfig::Painting(painting_placement(self.placement))
            }
            TaskKind::Tire => {
                self.reject_env()?;
                TaskConfig::Tire(tire_placement(self.placement))
            }
            TaskKind::Custom => self
                .env
                .clone()
                .ok_or_else(|| Error::Config("task = \"custom\" requires an [env] table".into()))?,
        };
        cfg.set_seed(self.seed);
        Ok(cfg)
    }

    fn reject_env(&self) -> Result<()> {
        if self.env.is_some() {
            return Err(Error::Config(format!(
                "[env] table only applies to task = \"custom\", not \"{}\"",
                self.task.name()
            )));
        }
        Ok(())
    }

    fn apply_common(&mut self, c: &CommonArgs) -> Result<()> {
        if let Some(t) = c.task {
            self.task = t;
        }
        if let Some(p) = c.placement {
            self.placement = p;
        }
        if let Some(o) = &c.out_dir {
            self.out_dir = o.clone();
        }
        self.seed = resolve_seed(c.seed, std::env::var("CMRL_SEED").ok().as_deref(), self.seed)?;
        self.discovery.seed = self.seed;
        Ok(())
    }

    fn echo(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self).map_err(|e| Error::Config(format!("config echo: {}", e)))
    }
}

/// Seed precedence: explicit flag, then the CMRL_SEED env var, then the
/// config file value.
fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env {
        let v = v.trim();
        if !v.is_empty() {
            return v
                .parse()
                .map_err(|_| Error::Config(format!("CMRL_SEED must be an integer, got '{}'", v)));
        }
    }
    Ok(file)
}

#[derive(Parser, Debug)]
#[command(name = "cmrl", version, about = "Latched-event discovery and planning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// TOML config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Master RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Built-in task family.
    #[arg(long, value_enum)]
    pub task: Option<TaskKind>,
    /// Placement variant of the task geometry.
    #[arg(long)]
    pub placement: Option<u32>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Roll random-exploration episodes and write dataset.jsonl.
    Collect {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Find memory units explaining stochastic transitions; write graph.json
    /// and report.json.
    Discover {
        #[command(flatten)]
        common: CommonArgs,
        /// Input dataset (default: <out_dir>/dataset.jsonl).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        min_gain: Option<f64>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Fit a tabular model and run value iteration; write model.json and
    /// policy.json.
    Plan {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Causal graph from `discover` (default: <out_dir>/graph.json).
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Roll the greedy policy and score reward predictions; write
    /// metrics.csv.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        test_episodes: Option<usize>,
    },
    /// Learning curves over training sizes, aggregated across seeds and
    /// placements; write curve.csv.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Parse arguments and execute; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Collect { common, episodes } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.apply_common(&common)?;
            if let Some(e) = episodes {
                cfg.collect.episodes = e;
            }
            cmd_collect(&cfg)
        }
        Cmd::Discover {
            common,
            data,
            epsilon,
            min_gain,
            restarts,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.apply_common(&common)?;
            if let Some(e) = epsilon {
                cfg.discovery.epsilon = e;
            }
            if let Some(m) = min_gain {
                cfg.discovery.min_gain = m;
            }
            if let Some(r) = restarts {
                cfg.discovery.restarts = r;
            }
            cmd_discover(&cfg, data.as_deref())
        }
        Cmd::Plan {
            common,
            data,
            graph,
            method,
            window,
            gamma,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.apply_common(&common)?;
            if let Some(m) = method {
                cfg.planner.method = m;
            }
            if let Some(w) = window {
                cfg.planner.window = w;
            }
            if let Some(g) = gamma {
                cfg.planner.gamma = g;
            }
            cmd_plan(&cfg, data.as_deref(), graph.as_deref())
        }
        Cmd::Eval {
            common,
            policy,
            model,
            episodes,
            test_episodes,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.apply_common(&common)?;
            if let Some(e) = episodes {
                cfg.eval.episodes = e;
            }
            if let Some(t) = test_episodes {
                cfg.eval.test_episodes = t;
            }
            cmd_eval(&cfg, policy.as_deref(), model.as_deref())
        }
        Cmd::Report { common } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            cfg.apply_common(&common)?;
            cmd_report(&cfg)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialize {}: {}", path.display(), e)))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {}", path.display(), e)))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        detail: format!("{}: {}", path.display(), e),
    })
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{:.6}", x)
    }
}

fn opt_metric(m: Option<f64>) -> String {
    m.map(fmt_f64).unwrap_or_else(|| "nan".into())
}

// Artifact file schemas. Each embeds the resolved run config.

#[derive(Serialize, Deserialize, Debug, Clone)]
struct GraphFileUnit {
    id: usize,
    attr: usize,
    center: Vec<f64>,
    radius: f64,
    gain: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct EntropyPair {
    initial: f64,
    #[serde(rename = "final")]
    residual: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct GraphFile {
    config: serde_json::Value,
    units: Vec<GraphFileUnit>,
    parents: BTreeMap<String, Vec<String>>,
    entropies: BTreeMap<String, EntropyPair>,
}

impl GraphFile {
    fn units(&self) -> Vec<MemoryUnit> {
        self.units
            .iter()
            .map(|u| MemoryUnit {
                id: u.id,
                event: BallEvent {
                    attr: u.attr,
                    center: u.center.clone(),
                    radius: u.radius,
                },
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct ReportFile {
    config: serde_json::Value,
    report: DiscoveryReport,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum IndexDescriptor {
    Augmented(AugmentedStateIndex),
    Stacked(StackedStateIndex),
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct ModelFile {
    config: serde_json::Value,
    method: Method,
    window: usize,
    index: IndexDescriptor,
    units: Vec<MemoryUnit>,
    model: TabularModel,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct PolicyFile {
    config: serde_json::Value,
    method: Method,
    window: usize,
    gamma: f64,
    tol: f64,
    units: Vec<MemoryUnit>,
    index: IndexDescriptor,
    states: Vec<u64>,
    actions: Vec<u16>,
    sweeps: usize,
    residual: f64,
}

fn cmd_collect(cfg: &RunConfig) -> Result<()> {
    let task = cfg.task_config()?;
    let mut d = collect_random(&task, cfg.collect.episodes, cfg.seed)?;
    d.meta = Some(cfg.echo()?);
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("dataset.jsonl");
    d.save(&path)?;
    println!(
        "wrote {} ({} episodes, horizon {})",
        path.display(),
        d.episode_count(),
        d.horizon()
    );
    Ok(())
}

fn cmd_discover(cfg: &RunConfig, data: Option<&Path>) -> Result<()> {
    let data_path = data
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("dataset.jsonl"));
    let d = Dataset::load(&data_path)?;
    let (graph, report) = discover(&d, &cfg.discovery)?;

    let units: Vec<GraphFileUnit> = graph
        .units
        .iter()
        .zip(&report.unit_details)
        .map(|(u, det)| GraphFileUnit {
            id: u.id,
            attr: u.event.attr,
            center: u.event.center.clone(),
            radius: u.event.radius,
            gain: det.gain,
        })
        .collect();
    let entropies: BTreeMap<String, EntropyPair> = report
        .variables
        .iter()
        .map(|v| {
            (
                v.name.clone(),
                EntropyPair {
                    initial: v.initial_entropy,
                    residual: v.final_entropy,
                },
            )
        })
        .collect();

    fs::create_dir_all(&cfg.out_dir)?;
    let graph_path = cfg.out_dir.join("graph.json");
    write_json(
        &graph_path,
        &GraphFile {
            config: cfg.echo()?,
            units,
            parents: graph.parents.clone(),
            entropies,
        },
    )?;
    let report_path = cfg.out_dir.join("report.json");
    write_json(
        &report_path,
        &ReportFile {
            config: cfg.echo()?,
            report,
        },
    )?;
    println!(
        "wrote {} and {} ({} memory units)",
        graph_path.display(),
        report_path.display(),
        graph.units.len()
    );
    Ok(())
}

/// Augment with the units, fit, and solve.
fn plan_with_units(
    d: &Dataset,
    units: &[MemoryUnit],
    gamma: f64,
    tol: f64,
) -> Result<(AugmentedStateIndex, TabularModel, ValueTable, PolicyTable)> {
    let aug = if units.is_empty() {
        d.clone()
    } else {
        augment_dataset(d, units)?
    };
    let idx = AugmentedStateIndex::new(&aug.schema, units.len())?;
    let mdl = fit_model(&aug, &idx)?;
    let (vt, pt) = value_iteration(&mdl, gamma, tol)?;
    Ok((idx, mdl, vt, pt))
}

fn plan_stacking(
    d: &Dataset,
    window: usize,
    gamma: f64,
    tol: f64,
) -> Result<(StackedStateIndex, TabularModel, ValueTable, PolicyTable)> {
    let idx = StackedStateIndex::new(&d.schema, window)?;
    let mdl = history_stacking_model(d, window, &idx)?;
    let (vt, pt) = value_iteration(&mdl, gamma, tol)?;
    Ok((idx, mdl, vt, pt))
}

fn cmd_plan(cfg: &RunConfig, data: Option<&Path>, graph: Option<&Path>) -> Result<()> {
    let data_path = data
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("dataset.jsonl"));
    let d = Dataset::load(&data_path)?;
    let (gamma, tol) = (cfg.planner.gamma, cfg.planner.tol);

    let (index, units, mdl, vt, pt, window) = match cfg.planner.method {
        Method::Full => {
            let graph_path = graph
                .map(Path::to_path_buf)
                .unwrap_or_else(|| cfg.out_dir.join("graph.json"));
            let gf: GraphFile = read_json(&graph_path)?;
            let units = gf.units();
            let (idx, mdl, vt, pt) = plan_with_units(&d, &units, gamma, tol)?;
            (IndexDescriptor::Augmented(idx), units, mdl, vt, pt, 0)
        }
        Method::Markov => {
            let (idx, mdl, vt, pt) = plan_with_units(&d, &[], gamma, tol)?;
            (IndexDescriptor::Augmented(idx), Vec::new(), mdl, vt, pt, 0)
        }
        Method::Stacking => {
            let w = cfg.planner.window;
            let (idx, mdl, vt, pt) = plan_stacking(&d, w, gamma, tol)?;
            (IndexDescriptor::Stacked(idx), Vec::new(), mdl, vt, pt, w)
        }
    };

    fs::create_dir_all(&cfg.out_dir)?;
    let model_path = cfg.out_dir.join("model.json");
    write_json(
        &model_path,
        &ModelFile {
            config: cfg.echo()?,
            method: cfg.planner.method,
            window,
            index: index.clone(),
            units: units.clone(),
            model: mdl,
        },
    )?;
    let policy_path = cfg.out_dir.join("policy.json");
    write_json(
        &policy_path,
        &PolicyFile {
            config: cfg.echo()?,
            method: cfg.planner.method,
            window,
            gamma,
            tol,
            units,
            index,
            states: pt.states.clone(),
            actions: pt.actions.clone(),
            sweeps: vt.sweeps,
            residual: vt.residual,
        },
    )?;
    println!(
        "wrote {} and {} ({} states, {} sweeps)",
        model_path.display(),
        policy_path.display(),
        pt.states.len(),
        vt.sweeps
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, policy: Option<&Path>, model: Option<&Path>) -> Result<()> {
    let policy_path = policy
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("policy.json"));
    let model_path = model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("model.json"));
    let pf: PolicyFile = read_json(&policy_path)?;
    let mf: ModelFile = read_json(&model_path)?;
    let task = cfg.task_config()?;
    let pt = PolicyTable {
        states: pf.states,
        actions: pf.actions,
    };

    let summary = match &pf.index {
        IndexDescriptor::Augmented(_) => evaluate_policy(&task, &pt, &pf.units, cfg.eval.episodes)?,
        IndexDescriptor::Stacked(sidx) => {
            evaluate_policy_stacking(&task, &pt, sidx, cfg.eval.episodes)?
        }
    };

    let test = collect_random(
        &task,
        cfg.eval.test_episodes,
        derive_seed(cfg.seed, &[TEST_DATA_SALT]),
    )?;
    let metrics = match &mf.index {
        IndexDescriptor::Augmented(idx) => reward_metrics(&mf.model, idx, &mf.units, &test)?,
        IndexDescriptor::Stacked(sidx) => stacking_reward_metrics(&mf.model, sidx, &test)?,
    };

    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("metrics.csv");
    let csv = metrics_csv(cfg, &summary, &metrics, pf.method)?;
    fs::write(&path, csv)?;
    println!(
        "wrote {} (mean reward {:.3}, success {:.3})",
        path.display(),
        summary.mean_reward,
        summary.success_rate
    );
    Ok(())
}

fn metrics_csv(
    cfg: &RunConfig,
    summary: &EvalSummary,
    metrics: &RewardMetrics,
    method: Method,
) -> Result<String> {
    let echo = serde_json::to_string(&cfg.echo()?)
        .map_err(|e| Error::Config(format!("config echo: {}", e)))?;
    let class = |v: f64| -> (String, String) {
        match metrics.class(v) {
            Some(c) => (opt_metric(c.recall), opt_metric(c.precision)),
            None => ("nan".into(), "nan".into()),
        }
    };
    let (r0, p0) = class(0.0);
    let (r1, p1) = class(1.0);
    let mut s = String::new();
    s.push_str(&format!("# config: {}\n", echo));
    s.push_str(
        "task,seed,placement,episodes,mean_reward,success_rate,recall0,precision0,recall1,precision1,method\n",
    );
    s.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        cfg.task.name(),
        cfg.seed,
        cfg.placement,
        summary.episodes,
        fmt_f64(summary.mean_reward),
        fmt_f64(summary.success_rate),
        r0,
        p0,
        r1,
        p1,
        method.name()
    ));
    Ok(s)
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    if cfg.report.sizes.is_empty() || cfg.report.seeds.is_empty() || cfg.report.placements.is_empty()
    {
        return Err(Error::Config(
            "report needs at least one size, seed, and placement".into(),
        ));
    }
    let mut cells: BTreeMap<(usize, Method), Vec<EvalSummary>> = BTreeMap::new();
    let mut horizon = 0usize;
    for &placement in &cfg.report.placements {
        for &seed in &cfg.report.seeds {
            let mut rc = cfg.clone();
            rc.placement = placement;
            rc.seed = seed;
            rc.discovery.seed = seed;
            let task = rc.task_config()?;
            horizon = task.engine()?.horizon();
            for &size in &cfg.report.sizes {
                let d = collect_random(&task, size, seed)?;
                for &method in &cfg.report.methods {
                    let summary = match method {
                        Method::Full => {
                            let (graph, _) = discover(&d, &rc.discovery)?;
                            let (_, _, _, pt) =
                                plan_with_units(&d, &graph.units, rc.planner.gamma, rc.planner.tol)?;
                            evaluate_policy(&task, &pt, &graph.units, cfg.report.eval_episodes)?
                        }
                        Method::Markov => {
                            let (_, _, _, pt) =
                                plan_with_units(&d, &[], rc.planner.gamma, rc.planner.tol)?;
                            evaluate_policy(&task, &pt, &[], cfg.report.eval_episodes)?
                        }
                        Method::Stacking => {
                            let (sidx, _, _, pt) = plan_stacking(
                                &d,
                                cfg.report.window,
                                rc.planner.gamma,
                                rc.planner.tol,
                            )?;
                            evaluate_policy_stacking(&task, &pt, &sidx, cfg.report.eval_episodes)?
                        }
                    };
                    cells.entry((size, method)).or_default().push(summary);
                }
            }
        }
    }

    let echo = serde_json::to_string(&cfg.echo()?)
        .map_err(|e| Error::Config(format!("config echo: {}", e)))?;
    let mut csv = String::new();
    csv.push_str(&format!("# config: {}\n", echo));
    csv.push_str("task,method,train_episodes,train_steps,runs,mean_reward,success_rate\n");
    for &size in &cfg.report.sizes {
        for &method in &cfg.report.methods {
            let runs = &cells[&(size, method)];
            let n = runs.len() as f64;
            let reward = runs.iter().map(|s| s.mean_reward).sum::<f64>() / n;
            let success = runs.iter().map(|s| s.success_rate).sum::<f64>() / n;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                cfg.task.name(),
                method.name(),
                size,
                size * horizon,
                runs.len(),
                fmt_f64(reward),
                fmt_f64(success)
            ));
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("curve.csv");
    fs::write(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("banana = 3\n");
        assert!(err.is_err());
        let err = toml::from_str::<RunConfig>("[discovery]\nbanana = 3\n");
        assert!(err.is_err());
    }

    #[test]
    fn custom_task_requires_env_table() {
        let cfg = RunConfig {
            task: TaskKind::Custom,
            ..RunConfig::default()
        };
        assert!(cfg.task_config().is_err());

        let text = r#"
task = "custom"

[env]
kind = "tire"
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let task = cfg.task_config().unwrap();
        assert!(matches!(task, TaskConfig::Tire(_)));
    }

    #[test]
    fn env_table_rejected_for_builtin_tasks() {
        let text = r#"
task = "painting"

[env]
kind = "tire"
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert!(cfg.task_config().is_err());
    }

    #[test]
    fn seed_precedence_is_flag_env_file() {
        assert_eq!(resolve_seed(Some(1), Some("2"), 3).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), 3).unwrap(), 2);
        assert_eq!(resolve_seed(None, Some(" 7 "), 3).unwrap(), 7);
        assert_eq!(resolve_seed(None, Some(""), 3).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, 3).unwrap(), 3);
        assert!(resolve_seed(None, Some("x"), 3).is_err());
    }

    #[test]
    fn placement_changes_the_resolved_geometry() {
        let a = RunConfig {
            placement: 0,
            ..RunConfig::default()
        };
        let b = RunConfig {
            placement: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.task_config().unwrap(), b.task_config().unwrap());
    }

    #[test]
    fn metrics_csv_has_the_pinned_columns() {
        let cfg = RunConfig::default();
        let summary = EvalSummary {
            episodes: 10,
            mean_reward: 0.5,
            success_rate: 0.5,
            mean_steps: 100.0,
        };
        let metrics = RewardMetrics {
            classes: vec![],
            steps: 0,
        };
        let csv = metrics_csv(&cfg, &summary, &metrics, Method::Full).unwrap();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# config: "));
        assert_eq!(
            lines.next().unwrap(),
            "task,seed,placement,episodes,mean_reward,success_rate,recall0,precision0,recall1,precision1,method"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("painting,0,0,10,0.500000,0.500000,nan,nan,nan,nan,full"));
    }
}
