//! The `traj` command line: `train`, `evaluate`, `sweep` and `batch-stats`.
//!
//! Settings resolve in three layers: built-in defaults, then an optional
//! `key = value` file given with `--config`, then flags.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta};
use crate::data::{
    chronological_split, compute_deltas, load_interactions, windowed_split, Dataset, DeltaScale, IngestOptions, Split,
};
use crate::error::Error;
use crate::eval::{evaluate_range, write_rank_records, EvalOptions, LshParams, MetricsReport, Task};
use crate::forward::{forward_batched, forward_sequential};
use crate::model::{init_state, Dims, LossWeights, ModelParams};
use crate::synth;
use crate::tbatch::{assign_batches, plan_stats, PlanStats};
use crate::train::{run_training, DetachPolicy, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "traj", version, about = "Dynamic embedding trajectories for interaction streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train a model and keep the epoch with the best validation metric.
    Train(RunArgs),
    /// Score a saved checkpoint on the validation and test splits.
    Evaluate(EvalArgs),
    /// Train over a grid of training fractions and embedding sizes.
    Sweep(SweepArgs),
    /// Batch plan statistics and sequential vs batched forward timing.
    BatchStats(StatsArgs),
}

/// Experiment settings shared by `train`, `evaluate` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Interaction CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `interaction` or `state_change`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Dynamic embedding size.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub train_pct: Option<f64>,
    #[arg(long)]
    pub val_pct: Option<f64>,
    /// Fixed test window right after validation; the remainder is unused.
    #[arg(long)]
    pub test_pct: Option<f64>,
    #[arg(long)]
    pub lambda_u: Option<f64>,
    #[arg(long)]
    pub lambda_i: Option<f64>,
    #[arg(long)]
    pub state_loss_scale: Option<f64>,
    /// `per-batch` or `none`.
    #[arg(long)]
    pub detach_policy: Option<String>,
    /// `mean-std`, `max` or `none`.
    #[arg(long)]
    pub delta_scale: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single-threaded with a fixed summation order.
    #[arg(long)]
    pub deterministic: bool,
    /// Feed only the dynamic user embedding to the state classifier.
    #[arg(long)]
    pub state_dynamic_only: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads for batch members.
    #[arg(long, env = "TRAJ_NUM_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Defaults to `<out>/checkpoint.bin`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also write per-interaction ranks of the test split as CSV.
    #[arg(long)]
    pub ranks: Option<PathBuf>,
    /// Report how often LSH retrieval agrees with exact search.
    #[arg(long)]
    pub lsh: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated training percentages.
    #[arg(long, value_delimiter = ',')]
    pub train_pcts: Vec<f64>,
    /// Comma-separated embedding sizes.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    /// Run grid points as concurrent child processes.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Use a seeded random stream of this many interactions instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub synthetic_users: usize,
    #[arg(long, default_value_t = 1000)]
    pub synthetic_items: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "TRAJ_NUM_THREADS")]
    pub threads: Option<usize>,
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub data: PathBuf,
    pub task: Task,
    pub train_pct: f64,
    pub val_pct: f64,
    pub test_pct: Option<f64>,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub sweep_train_pcts: Vec<f64>,
    pub sweep_dims: Vec<usize>,
}

impl ExperimentSpec {
    pub fn split(&self, n: usize) -> crate::Result<Split> {
        match self.test_pct {
            Some(t) => windowed_split(n, self.train_pct, self.val_pct, t),
            None => chronological_split(n, self.train_pct, self.val_pct),
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "data",
    "task",
    "epochs",
    "lr",
    "weight_decay",
    "dim",
    "train_pct",
    "val_pct",
    "test_pct",
    "lambda_u",
    "lambda_i",
    "state_loss_scale",
    "detach_policy",
    "delta_scale",
    "state_uses_static",
    "seed",
    "deterministic",
    "out",
    "threads",
    "train_pcts",
    "dims",
];

/// Parses a `key = value` file. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", k + 1);
        };
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            bail!("config line {}: unknown key {key:?}", k + 1);
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| anyhow::anyhow!("bad value {x:?} for {key}")))
        .collect()
}

fn available_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Defaults, then the config file, then flags.
pub fn resolve_spec(args: &RunArgs) -> anyhow::Result<ExperimentSpec> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            parse_config(&text)?
        }
        None => BTreeMap::new(),
    };
    fn get<T: std::str::FromStr>(
        file: &BTreeMap<String, String>,
        key: &str,
        flag: Option<T>,
    ) -> anyhow::Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        file.get(key)
            .map(|v| v.parse().map_err(|_| anyhow::anyhow!("bad value {v:?} for {key}")))
            .transpose()
    }

    let task: Task = match get::<String>(&file, "task", args.task.clone())? {
        Some(t) => t.parse()?,
        None => Task::Interaction,
    };
    let (def_train, def_val) = match task {
        Task::Interaction => (80.0, 10.0),
        Task::StateChange => (60.0, 20.0),
    };
    let mut train = TrainConfig {
        task,
        threads: available_threads(),
        ..TrainConfig::default()
    };
    if let Some(v) = get(&file, "epochs", args.epochs)? {
        train.epochs = v;
    }
    if let Some(v) = get(&file, "lr", args.lr)? {
        train.learning_rate = v;
    }
    if let Some(v) = get(&file, "weight_decay", args.weight_decay)? {
        train.weight_decay = v;
    }
    if let Some(v) = get(&file, "dim", args.dim)? {
        train.embedding_dim = v;
    }
    if let Some(v) = get(&file, "lambda_u", args.lambda_u)? {
        train.lambda_u = v;
    }
    if let Some(v) = get(&file, "lambda_i", args.lambda_i)? {
        train.lambda_i = v;
    }
    if let Some(v) = get(&file, "state_loss_scale", args.state_loss_scale)? {
        train.state_loss_scale = v;
    }
    if let Some(v) = get::<String>(&file, "detach_policy", args.detach_policy.clone())? {
        train.detach_policy = v.parse::<DetachPolicy>()?;
    }
    if let Some(v) = get::<String>(&file, "delta_scale", args.delta_scale.clone())? {
        train.delta_scale = v.parse::<DeltaScale>()?;
    }
    if let Some(v) = get(&file, "state_uses_static", None)? {
        train.state_uses_static = v;
    }
    if args.state_dynamic_only {
        train.state_uses_static = false;
    }
    if let Some(v) = get(&file, "seed", args.seed)? {
        train.seed = v;
    }
    train.deterministic = args.deterministic || get(&file, "deterministic", None::<bool>)?.unwrap_or(false);
    if let Some(v) = get(&file, "threads", args.threads)? {
        train.threads = v.max(1);
    }
    train.validate()?;

    let data = get::<PathBuf>(&file, "data", args.data.clone())?
        .ok_or_else(|| anyhow::anyhow!("no dataset given (use --data)"))?;
    let spec = ExperimentSpec {
        schema_version: SCHEMA_VERSION,
        data,
        task,
        train_pct: get(&file, "train_pct", args.train_pct)?.unwrap_or(def_train),
        val_pct: get(&file, "val_pct", args.val_pct)?.unwrap_or(def_val),
        test_pct: get(&file, "test_pct", args.test_pct)?,
        train,
        out: get(&file, "out", args.out.clone())?.unwrap_or_else(|| PathBuf::from("traj-out")),
        sweep_train_pcts: file.get("train_pcts").map(|v| parse_list("train_pcts", v)).transpose()?.unwrap_or_default(),
        sweep_dims: file.get("dims").map(|v| parse_list("dims", v)).transpose()?.unwrap_or_default(),
    };
    Ok(spec)
}

fn load(spec: &ExperimentSpec) -> anyhow::Result<Dataset> {
    let ds = load_interactions(&spec.data, &IngestOptions::default())?;
    if spec.task == Task::StateChange && !ds.has_labels {
        return Err(Error::NoStateLabels.into());
    }
    Ok(ds)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
struct EpochLine<'a> {
    schema_version: u32,
    epoch: usize,
    loss: &'a crate::model::LossComponents,
    validation_metric: Option<f64>,
    seconds: f64,
}

/// Trains per `spec`; writes `checkpoint.bin`, `epochs.jsonl`,
/// `metrics.json` and `spec.json` under the output directory and returns the
/// selected epoch's test metrics.
pub fn cmd_train(spec: &ExperimentSpec) -> anyhow::Result<MetricsReport> {
    let ds = load(spec)?;
    let split = spec.split(ds.len())?;
    fs::create_dir_all(&spec.out).with_context(|| format!("creating {}", spec.out.display()))?;
    write_json(&spec.out.join("spec.json"), spec)?;

    let log_path = spec.out.join("epochs.jsonl");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log_err = None;
    let outcome = run_training(&ds, &split, &spec.train, |r| {
        let line = EpochLine {
            schema_version: r.schema_version,
            epoch: r.epoch,
            loss: &r.loss,
            validation_metric: r.validation_metric,
            seconds: r.seconds,
        };
        let text = serde_json::to_string(&line).expect("plain data serializes");
        eprintln!("{text}");
        if let Err(e) = writeln!(log, "{text}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }

    let best = &outcome.best;
    let ck = Checkpoint {
        params: best.params.clone(),
        state: best.state.clone(),
        meta: CheckpointMeta {
            task: spec.task,
            train_pct: spec.train_pct,
            val_pct: spec.val_pct,
            test_pct: spec.test_pct,
            delta_scale: spec.train.delta_scale,
            seed: spec.train.seed,
            epoch: best.epoch,
            validation_metric: best.validation_metric,
        },
    };
    write_checkpoint(spec.out.join("checkpoint.bin"), &ck)?;
    write_json(&spec.out.join("metrics.json"), &best.test)?;
    Ok(best.test.clone())
}

fn check_dims(dims: &Dims, ds: &Dataset) -> anyhow::Result<()> {
    if (dims.num_users, dims.num_items, dims.feature_dim) != (ds.num_users, ds.num_items, ds.feature_dim) {
        return Err(Error::Shape {
            left: format!(
                "checkpoint with {} users, {} items, {} features",
                dims.num_users, dims.num_items, dims.feature_dim
            ),
            right: format!(
                "dataset with {} users, {} items, {} features",
                ds.num_users, ds.num_items, ds.feature_dim
            ),
        }
        .into());
    }
    Ok(())
}

/// Replays validation from the checkpointed training-end state, then scores
/// the test split.
pub fn cmd_evaluate(
    data: &Path,
    checkpoint: &Path,
    ranks: Option<&Path>,
    lsh: bool,
) -> anyhow::Result<MetricsReport> {
    let ck = read_checkpoint(checkpoint)?;
    let ds = load_interactions(data, &IngestOptions::default())?;
    check_dims(&ck.params.dims, &ds)?;
    let m = &ck.meta;
    if m.task == Task::StateChange && !ds.has_labels {
        return Err(Error::NoStateLabels.into());
    }
    let split = match m.test_pct {
        Some(t) => windowed_split(ds.len(), m.train_pct, m.val_pct, t)?,
        None => chronological_split(ds.len(), m.train_pct, m.val_pct)?,
    };
    let deltas = compute_deltas(&ds, m.delta_scale, split.train.clone());
    let mut state = ck.state.clone();
    evaluate_range(&ds, &deltas, split.validation, &ck.params, &mut state, m.task, &EvalOptions::default())?;
    let opts = EvalOptions {
        lsh: lsh.then(|| LshParams {
            seed: m.seed,
            ..LshParams::default()
        }),
    };
    let test = evaluate_range(&ds, &deltas, split.test, &ck.params, &mut state, m.task, &opts)?;
    if let Some(path) = ranks {
        write_rank_records(path, &test.ranks)?;
    }
    Ok(test.report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub train_pct: f64,
    pub dim: usize,
    pub out: PathBuf,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    schema_version: u32,
    points: &'a [SweepPoint],
}

/// Grid points in order, duplicates dropped with a warning.
pub fn sweep_grid(train_pcts: &[f64], dims: &[usize]) -> Vec<(f64, usize)> {
    let mut grid: Vec<(f64, usize)> = Vec::new();
    for &tp in train_pcts {
        for &d in dims {
            if grid.iter().any(|&(a, b)| a == tp && b == d) {
                eprintln!("warning: duplicate grid point train_pct={tp} dim={d} skipped");
                continue;
            }
            grid.push((tp, d));
        }
    }
    grid
}

fn point_config(spec: &ExperimentSpec) -> String {
    let t = &spec.train;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
    kv("data", spec.data.display().to_string());
    kv("task", spec.task.to_string());
    kv("epochs", t.epochs.to_string());
    kv("lr", t.learning_rate.to_string());
    kv("weight_decay", t.weight_decay.to_string());
    kv("dim", t.embedding_dim.to_string());
    kv("train_pct", spec.train_pct.to_string());
    kv("val_pct", spec.val_pct.to_string());
    if let Some(tp) = spec.test_pct {
        kv("test_pct", tp.to_string());
    }
    kv("lambda_u", t.lambda_u.to_string());
    kv("lambda_i", t.lambda_i.to_string());
    kv("state_loss_scale", t.state_loss_scale.to_string());
    kv("detach_policy", t.detach_policy.to_string());
    kv("delta_scale", t.delta_scale.to_string());
    kv("state_uses_static", t.state_uses_static.to_string());
    kv("seed", t.seed.to_string());
    kv("deterministic", t.deterministic.to_string());
    kv("threads", t.threads.to_string());
    kv("out", spec.out.display().to_string());
    s
}

/// Runs every grid point; validation and test are fixed windows of
/// `val_pct` (and `test_pct`, defaulting to `val_pct`) right after training.
pub fn cmd_sweep(spec: &ExperimentSpec, parallel: bool) -> anyhow::Result<Vec<SweepPoint>> {
    let tps = if spec.sweep_train_pcts.is_empty() {
        vec![spec.train_pct]
    } else {
        spec.sweep_train_pcts.clone()
    };
    let dims = if spec.sweep_dims.is_empty() {
        vec![spec.train.embedding_dim]
    } else {
        spec.sweep_dims.clone()
    };
    let grid = sweep_grid(&tps, &dims);
    fs::create_dir_all(&spec.out).with_context(|| format!("creating {}", spec.out.display()))?;

    let point_specs: Vec<ExperimentSpec> = grid
        .iter()
        .map(|&(tp, d)| {
            let mut s = spec.clone();
            s.train_pct = tp;
            s.test_pct = Some(spec.test_pct.unwrap_or(spec.val_pct));
            s.train.embedding_dim = d;
            s.out = spec.out.join(format!("train{tp}-dim{d}"));
            s.sweep_train_pcts.clear();
            s.sweep_dims.clear();
            s
        })
        .collect();

    let results: Vec<Result<MetricsReport, String>> = if parallel {
        run_children(&point_specs)?
    } else {
        point_specs
            .iter()
            .map(|s| cmd_train(s).map_err(|e| format!("{e:#}")))
            .collect()
    };

    let points: Vec<SweepPoint> = point_specs
        .iter()
        .zip(results)
        .map(|(s, r)| SweepPoint {
            train_pct: s.train_pct,
            dim: s.train.embedding_dim,
            out: s.out.clone(),
            error: r.as_ref().err().cloned(),
            report: r.ok(),
        })
        .collect();
    write_json(
        &spec.out.join("sweep.json"),
        &SweepSummary {
            schema_version: SCHEMA_VERSION,
            points: &points,
        },
    )?;
    let csv_path = spec.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    w.write_record(["train_pct", "dim", "mrr", "recall_at_10", "auc", "error"])?;
    for p in &points {
        let r = p.report.as_ref();
        w.write_record([
            p.train_pct.to_string(),
            p.dim.to_string(),
            r.map_or(String::new(), |r| r.mrr.to_string()),
            r.map_or(String::new(), |r| r.recall_at_10.to_string()),
            r.and_then(|r| r.auc).map_or(String::new(), |a| a.to_string()),
            p.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(points)
}

fn run_children(specs: &[ExperimentSpec]) -> anyhow::Result<Vec<Result<MetricsReport, String>>> {
    let exe = std::env::current_exe().context("locating the traj executable")?;
    let mut children = Vec::new();
    for s in specs {
        fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
        let cfg_path = s.out.join("point.conf");
        fs::write(&cfg_path, point_config(s)).with_context(|| format!("writing {}", cfg_path.display()))?;
        let child = Command::new(&exe)
            .arg("train")
            .arg("--config")
            .arg(&cfg_path)
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::piped())
            .spawn()
            .context("spawning grid point")?;
        children.push(child);
    }
    Ok(children
        .into_iter()
        .zip(specs)
        .map(|(child, s)| {
            let out = child.wait_with_output().map_err(|e| e.to_string())?;
            if !out.status.success() {
                let msg = String::from_utf8_lossy(&out.stderr);
                return Err(msg.lines().last().unwrap_or("failed").to_string());
            }
            let text = fs::read_to_string(s.out.join("metrics.json")).map_err(|e| e.to_string())?;
            serde_json::from_str(&text).map_err(|e| e.to_string())
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchStatsReport {
    pub schema_version: u32,
    pub plan: PlanStats,
    pub threads: usize,
    pub sequential_seconds: f64,
    pub batched_seconds: f64,
    pub speedup: f64,
    pub max_state_difference: f64,
}

/// Plan statistics plus the wall-clock time of one frozen-parameter forward
/// epoch processed one interaction at a time and batch by batch.
pub fn batch_stats(ds: &Dataset, dim: usize, seed: u64, threads: usize) -> anyhow::Result<BatchStatsReport> {
    let plan = assign_batches(ds);
    let stats = plan_stats(&plan);
    let dims = Dims {
        n: dim,
        num_users: ds.num_users,
        num_items: ds.num_items,
        feature_dim: ds.feature_dim,
    };
    let p = ModelParams::init(dims, seed);
    let deltas = compute_deltas(ds, DeltaScale::MeanStd, 0..ds.len());
    let w = LossWeights {
        state_scale: 0.0,
        ..LossWeights::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .context("building thread pool")?;

    let mut seq_state = init_state(dims, seed);
    let t0 = Instant::now();
    forward_sequential(&p, &mut seq_state, ds, &deltas, 0..ds.len(), &w);
    let sequential_seconds = t0.elapsed().as_secs_f64();

    let mut bat_state = init_state(dims, seed);
    let t0 = Instant::now();
    forward_batched(&p, &mut bat_state, ds, &deltas, &plan, &w, Some(&pool));
    let batched_seconds = t0.elapsed().as_secs_f64();

    Ok(BatchStatsReport {
        schema_version: SCHEMA_VERSION,
        plan: stats,
        threads: threads.max(1),
        sequential_seconds,
        batched_seconds,
        speedup: sequential_seconds / batched_seconds.max(f64::MIN_POSITIVE),
        max_state_difference: seq_state.max_abs_diff(&bat_state),
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Cmd::Train(args) => {
            let spec = resolve_spec(&args)?;
            let report = cmd_train(&spec)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Evaluate(args) => {
            let data = args.run.data.clone().ok_or_else(|| anyhow::anyhow!("no dataset given (use --data)"))?;
            let ck = match (&args.checkpoint, &args.run.out) {
                (Some(c), _) => c.clone(),
                (None, Some(out)) => out.join("checkpoint.bin"),
                (None, None) => bail!("no checkpoint given (use --checkpoint or --out)"),
            };
            let report = cmd_evaluate(&data, &ck, args.ranks.as_deref(), args.lsh)?;
            if let Some(out) = &args.run.out {
                fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
                write_json(&out.join("evaluation.json"), &report)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Sweep(args) => {
            let mut spec = resolve_spec(&args.run)?;
            if !args.train_pcts.is_empty() {
                spec.sweep_train_pcts = args.train_pcts.clone();
            }
            if !args.dims.is_empty() {
                spec.sweep_dims = args.dims.clone();
            }
            let points = cmd_sweep(&spec, args.parallel)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&SweepSummary {
                    schema_version: SCHEMA_VERSION,
                    points: &points
                })?
            );
            let failed = points.iter().filter(|p| p.error.is_some()).count();
            if failed > 0 {
                bail!("{failed} of {} grid points failed", points.len());
            }
        }
        Cmd::BatchStats(args) => {
            let ds = match (&args.data, args.synthetic) {
                (_, Some(len)) => synth::random_stream(args.seed, len, args.synthetic_users, args.synthetic_items, 1),
                (Some(path), None) => load_interactions(path, &IngestOptions::default())?,
                (None, None) => bail!("no dataset given (use --data or --synthetic)"),
            };
            let report = batch_stats(&ds, args.dim, args.seed, args.threads.unwrap_or_else(available_threads))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
