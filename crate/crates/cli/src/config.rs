//! Flag, environment and config-file resolution.
//!
//! Precedence, highest first: command-line flag, `DPSTREAM_*` environment
//! variable, config file, built-in default. The config file is flat
//! `key=value` text using the long flag names; `#` starts a comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgAction, Args};
use dpstream_core::harness::{MetricsFormat, Order, ReplayConfig, SchedulerKind, SourceKind, StreamSource, SynthConfig};
use dpstream_core::ledger::parse_eps;
use dpstream_core::schedule::BaseSource;

use crate::exit::{CliError, CliResult};

#[derive(Args, Debug, Clone, Default)]
pub struct ScheduleArgs {
    /// Flat key=value config file; flags take precedence over its keys.
    #[arg(long, env = "DPSTREAM_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "DPSTREAM_SCHEDULER")]
    pub scheduler: Option<String>,
    /// Privacy parameter, as a decimal or fraction (`0.1`, `1/10`).
    #[arg(long, env = "DPSTREAM_EPSILON")]
    pub epsilon: Option<String>,
    #[arg(long, env = "DPSTREAM_LAMBDA")]
    pub lambda: Option<f64>,
    /// Multi-resolution block size.
    #[arg(long = "B", env = "DPSTREAM_B")]
    pub block: Option<usize>,
    /// Update batch size.
    #[arg(long, env = "DPSTREAM_B0")]
    pub b0: Option<usize>,
    /// Sliding window size, `(2^k − 1)·w0`.
    #[arg(long, env = "DPSTREAM_W")]
    pub w: Option<usize>,
    #[arg(long, env = "DPSTREAM_W0")]
    pub w0: Option<usize>,
    /// Override the public Lipschitz bound.
    #[arg(long, env = "DPSTREAM_LIPSCHITZ")]
    pub lipschitz: Option<f64>,
    /// `multires` (reuse the cumulative model) or `standalone`.
    #[arg(long, env = "DPSTREAM_BASE_SOURCE")]
    pub base_source: Option<String>,
    /// Recompute the continual base already at t = B.
    #[arg(long, env = "DPSTREAM_BASE_AT_BLOCK", action = ArgAction::Set)]
    pub base_at_block: Option<bool>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long, env = "DPSTREAM_GAMMA")]
    pub gamma: Option<f64>,
    #[arg(long, env = "DPSTREAM_ITERS")]
    pub iters: Option<usize>,
    #[arg(long, env = "DPSTREAM_MINIBATCH")]
    pub minibatch: Option<usize>,
    #[arg(long, env = "DPSTREAM_PASSES")]
    pub passes: Option<usize>,
    /// Comma-separated replay seeds.
    #[arg(long, env = "DPSTREAM_SEEDS")]
    pub seeds: Option<String>,
    /// `synthetic`, `idx` or `csv`.
    #[arg(long, env = "DPSTREAM_SOURCE")]
    pub source: Option<String>,
    #[arg(long, env = "DPSTREAM_IMAGES")]
    pub images: Option<PathBuf>,
    #[arg(long, env = "DPSTREAM_LABELS")]
    pub labels: Option<PathBuf>,
    #[arg(long, env = "DPSTREAM_TEST_IMAGES")]
    pub test_images: Option<PathBuf>,
    #[arg(long, env = "DPSTREAM_TEST_LABELS")]
    pub test_labels: Option<PathBuf>,
    #[arg(long, env = "DPSTREAM_CSV")]
    pub csv: Option<PathBuf>,
    /// Held-out CSV; without it the last quarter of `--csv` is held out.
    #[arg(long, env = "DPSTREAM_TEST_CSV")]
    pub test_csv: Option<PathBuf>,
    /// Shuffle the stream with this seed before replay.
    #[arg(long, env = "DPSTREAM_SHUFFLE_SEED")]
    pub shuffle_seed: Option<u64>,
    /// Use only the first N stream examples.
    #[arg(long, env = "DPSTREAM_LIMIT")]
    pub limit: Option<usize>,
    #[arg(long, env = "DPSTREAM_SYNTH_D")]
    pub synth_d: Option<usize>,
    #[arg(long, env = "DPSTREAM_SYNTH_K")]
    pub synth_k: Option<usize>,
    #[arg(long, env = "DPSTREAM_SYNTH_N")]
    pub synth_n: Option<usize>,
    #[arg(long, env = "DPSTREAM_SYNTH_SIGMA")]
    pub synth_sigma: Option<f64>,
    #[arg(long, env = "DPSTREAM_SYNTH_DRIFT")]
    pub synth_drift: Option<f64>,
    #[arg(long, env = "DPSTREAM_SYNTH_SEED")]
    pub synth_seed: Option<u64>,
    /// Size of the synthetic held-out set.
    #[arg(long, env = "DPSTREAM_TEST_SIZE")]
    pub test_size: Option<usize>,
    /// Clip every example onto the unit L1 ball.
    #[arg(long, env = "DPSTREAM_CLIP_L1", action = ArgAction::Set)]
    pub clip_l1: Option<bool>,
    /// `false` trains without noise and disables the ledger.
    #[arg(long, env = "DPSTREAM_PRIVATE", action = ArgAction::Set)]
    pub private: Option<bool>,
    #[arg(long, env = "DPSTREAM_OUT")]
    pub out: Option<PathBuf>,
    /// `csv` or `jsonl`.
    #[arg(long, env = "DPSTREAM_FORMAT")]
    pub format: Option<String>,
    #[arg(long, hide = true, env = "DPSTREAM_INJECT_BUDGET_VIOLATION")]
    pub inject_budget_violation: bool,
}

const SCHEDULE_KEYS: &[&str] = &[
    "scheduler", "epsilon", "lambda", "B", "b0", "w", "w0", "lipschitz", "base-source", "base-at-block",
];

const RUN_KEYS: &[&str] = &[
    "gamma", "iters", "minibatch", "passes", "seeds", "source", "images", "labels", "test-images", "test-labels",
    "csv", "test-csv", "shuffle-seed", "limit", "synth-d", "synth-k", "synth-n", "synth-sigma", "synth-drift",
    "synth-seed", "test-size", "clip-l1", "private", "out", "format",
];

/// Parsed config file plus an echo of every resolved value.
pub struct Layers {
    file: BTreeMap<String, String>,
    pub echo: Vec<(String, String)>,
}

impl Layers {
    pub fn load(path: Option<&Path>, allowed: &[&[&str]]) -> CliResult<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| CliError::usage(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
                let key = k.trim().replace('_', "-");
                if !allowed.iter().any(|keys| keys.contains(&key.as_str())) {
                    return Err(CliError::usage(format!("{}:{}: unknown key `{}`", path.display(), n + 1, k.trim())));
                }
                file.insert(key, v.trim().to_string());
            }
        }
        Ok(Self { file, echo: Vec::new() })
    }

    /// Flag/env value if present, else the file value, else `None`.
    pub fn pick<T: FromStr + ToString>(&mut self, key: &str, cli: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = match cli {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(s) => Some(
                    s.parse::<T>()
                        .map_err(|e| CliError::usage(format!("config key `{key}`: {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.echo.push((key.to_string(), v.to_string()));
        }
        Ok(v)
    }

    pub fn pick_or<T: FromStr + ToString>(&mut self, key: &str, cli: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.pick(key, cli)? {
            Some(v) => Ok(v),
            None => {
                self.echo.push((key.to_string(), default.to_string()));
                Ok(default)
            }
        }
    }

    fn require<T: FromStr + ToString>(&mut self, key: &str, cli: Option<T>) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.pick(key, cli)?
            .ok_or_else(|| CliError::usage(format!("missing required flag --{key}")))
    }
}

fn path_arg(layers: &mut Layers, key: &str, cli: Option<PathBuf>) -> CliResult<Option<PathBuf>> {
    Ok(layers
        .pick(key, cli.map(|p| p.display().to_string()))?
        .map(PathBuf::from))
}

/// Resolves the scheduler section into a validated replay config. The
/// window and batch constraints are checked here, before any work.
pub fn resolve_schedule(args: &ScheduleArgs, layers: &mut Layers) -> CliResult<ReplayConfig> {
    let scheduler: SchedulerKind = layers
        .require::<String>("scheduler", args.scheduler.clone())?
        .parse()
        .map_err(CliError::from)?;
    let eps_text = layers.require::<String>("epsilon", args.epsilon.clone())?;
    let eps = parse_eps(&eps_text)?;
    let lambda = layers.require("lambda", args.lambda)?;
    let mut cfg = ReplayConfig::new(scheduler, eps, lambda);
    cfg.block = layers.pick("B", args.block)?;
    cfg.batch = layers.pick("b0", args.b0)?;
    cfg.w = layers.pick("w", args.w)?;
    cfg.w0 = layers.pick("w0", args.w0)?;
    cfg.lipschitz = layers.pick("lipschitz", args.lipschitz)?;
    cfg.base_source = match layers.pick_or("base-source", args.base_source.clone(), "multires".to_string())?.as_str() {
        "multires" => BaseSource::Multires,
        "standalone" => BaseSource::Standalone,
        other => return Err(CliError::usage(format!("--base-source: `{other}` is not multires or standalone"))),
    };
    cfg.base_at_block = layers.pick_or("base-at-block", args.base_at_block, true)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestSpec {
    Idx { images: PathBuf, labels: PathBuf },
    Csv(PathBuf),
    /// Hold out the last quarter of the loaded stream.
    HoldOutTail,
    SynthHoldout(usize),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub replay: ReplayConfig,
    pub seeds: Vec<u64>,
    pub source: StreamSource,
    pub test: TestSpec,
    pub limit: Option<usize>,
    pub out: PathBuf,
    pub format: MetricsFormat,
    pub inject_budget_violation: bool,
    /// Every resolved setting, in resolution order.
    pub echo: Vec<(String, String)>,
}

pub fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::usage(format!("--seeds `{s}`: {e}")))?;
    if seeds.is_empty() {
        return Err(CliError::usage("--seeds must list at least one seed"));
    }
    Ok(seeds)
}

pub fn parse_run(args: &RunArgs) -> CliResult<RunConfig> {
    let mut layers = Layers::load(args.schedule.config.as_deref(), &[SCHEDULE_KEYS, RUN_KEYS])?;
    let mut replay = resolve_schedule(&args.schedule, &mut layers)?;
    replay.train.gamma = layers.pick_or("gamma", args.gamma, 10.0)?;
    replay.train.iterations = layers.pick_or("iters", args.iters, 500)?;
    replay.train.minibatch = layers.pick_or("minibatch", args.minibatch, 256)?;
    replay.train.passes = layers.pick_or("passes", args.passes, 1)?;
    replay.clip_l1 = layers.pick_or("clip-l1", args.clip_l1, true)?;
    replay.private = layers.pick_or("private", args.private, true)?;
    let seeds = parse_seeds(&layers.pick_or("seeds", args.seeds.clone(), "1".to_string())?)?;

    let source_kind = layers.pick_or("source", args.source.clone(), "synthetic".to_string())?;
    let (kind, test) = match source_kind.as_str() {
        "synthetic" => {
            let cfg = SynthConfig {
                d: layers.pick_or("synth-d", args.synth_d, 20)?,
                k: layers.pick_or("synth-k", args.synth_k, 3)?,
                n: layers.pick_or("synth-n", args.synth_n, 20_000)?,
                sigma: layers.pick_or("synth-sigma", args.synth_sigma, 0.5)?,
                drift_rate: layers.pick_or("synth-drift", args.synth_drift, 0.0)?,
                seed: layers.pick_or("synth-seed", args.synth_seed, 0)?,
            };
            cfg.validate()?;
            let size = layers.pick_or("test-size", args.test_size, 5000)?;
            (SourceKind::Synthetic(cfg), TestSpec::SynthHoldout(size))
        }
        "idx" => {
            let images = path_arg(&mut layers, "images", args.images.clone())?;
            let labels = path_arg(&mut layers, "labels", args.labels.clone())?;
            let test_images = path_arg(&mut layers, "test-images", args.test_images.clone())?;
            let test_labels = path_arg(&mut layers, "test-labels", args.test_labels.clone())?;
            let (Some(images), Some(labels)) = (images, labels) else {
                return Err(CliError::usage("--source idx requires --images and --labels"));
            };
            let test = match (test_images, test_labels) {
                (Some(images), Some(labels)) => TestSpec::Idx { images, labels },
                (None, None) => TestSpec::HoldOutTail,
                _ => return Err(CliError::usage("--test-images and --test-labels go together")),
            };
            (SourceKind::IdxFiles { images, labels }, test)
        }
        "csv" => {
            let path = path_arg(&mut layers, "csv", args.csv.clone())?
                .ok_or_else(|| CliError::usage("--source csv requires --csv"))?;
            let test = match path_arg(&mut layers, "test-csv", args.test_csv.clone())? {
                Some(p) => TestSpec::Csv(p),
                None => TestSpec::HoldOutTail,
            };
            (SourceKind::Csv(path), test)
        }
        other => return Err(CliError::usage(format!("--source: `{other}` is not synthetic, idx or csv"))),
    };
    let order = match layers.pick("shuffle-seed", args.shuffle_seed)? {
        Some(s) => Order::Shuffled(s),
        None => Order::AsGiven,
    };
    let limit = layers.pick("limit", args.limit)?;
    let out = PathBuf::from(layers.pick_or("out", args.out.as_ref().map(|p| p.display().to_string()), "dpstream-out".into())?);
    let format = match layers.pick_or("format", args.format.clone(), "csv".to_string())?.as_str() {
        "csv" => MetricsFormat::Csv,
        "jsonl" => MetricsFormat::Jsonl,
        other => return Err(CliError::usage(format!("--format: `{other}` is not csv or jsonl"))),
    };
    Ok(RunConfig {
        replay,
        seeds,
        source: StreamSource { kind, order },
        test,
        limit,
        out,
        format,
        inject_budget_violation: args.inject_budget_violation,
        echo: layers.echo,
    })
}

pub fn schedule_layers(args: &ScheduleArgs) -> CliResult<Layers> {
    Layers::load(args.config.as_deref(), &[SCHEDULE_KEYS, RUN_KEYS])
}
