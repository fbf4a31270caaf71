//! `wat` command line: run trials, sweep grids, generate synthetic data, compare metrics files.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data_io::{
    compute_stats, read_libsvm, split_and_shuffle, split_indices, synth_noisy_stream,
    write_libsvm, Dataset, Example, LibsvmReader, SynthConfig,
};
use crate::driver::{run, EnsembleSpec, RunConfig, RunTrace, DEFAULT_CHECKPOINTS};
use crate::ensemble::Averaging;
use crate::error::WatError;
use crate::learners::{c_err_grid, eta_grid, lambda_grid, LearnerConfig};
use crate::metrics::{mean, wilcoxon_signed_rank, WILCOXON_MIN_N};
use crate::reservoir::Weighting;

pub const CSV_HEADER: [&str; 5] = ["seed", "timestep", "model", "test_acc", "sparsity"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] WatError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "wat", version, about = "Weighted-reservoir augmented training for online linear classifiers")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset for each seed and write per-checkpoint metrics.
    Run(RunArgs),
    /// Run a hyperparameter grid and select a cell.
    Sweep(SweepArgs),
    /// Write a synthetic noisy linearly separable stream in LIBSVM format.
    Synth(SynthArgs),
    /// Compare two model tags across metrics files, one per dataset.
    Compare(CompareArgs),
    /// Dataset statistics: examples, dimension, sparsity.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    /// PA-II
    Pac,
    /// PA-I
    Pa1,
    Fsol,
    Sgdm,
    Adagrad,
    Tgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Standard,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Simple,
    Weighted,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// LIBSVM training data (split into train/test unless --test is given).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Separate LIBSVM test file; --dataset is then only shuffled.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Feature dimension; defaults to max index + 1.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Fraction of examples used for training.
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
}

#[derive(Debug, Clone, Args)]
pub struct LearnerArgs {
    #[arg(long, value_enum, default_value_t = Algo::Pac)]
    pub algo: Algo,
    /// Aggressiveness for pac / pa1.
    #[arg(long, default_value_t = 1.0)]
    pub c_err: f64,
    /// FSOL step size.
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// FSOL l1 strength.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Learning rate for sgdm / adagrad / tgd (algorithm default if omitted).
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long, default_value_t = LearnerConfig::DEFAULT_MOMENTUM)]
    pub momentum: f64,
    #[arg(long, default_value_t = LearnerConfig::DEFAULT_TGD_GRAVITY)]
    pub gravity: f64,
    /// Truncation period for tgd.
    #[arg(long, default_value_t = LearnerConfig::DEFAULT_TGD_PERIOD)]
    pub period: u64,
}

impl LearnerArgs {
    pub fn config(&self) -> LearnerConfig {
        match self.algo {
            Algo::Pac => LearnerConfig::Pac { c_err: self.c_err },
            Algo::Pa1 => LearnerConfig::Pa1 { c_err: self.c_err },
            Algo::Fsol => LearnerConfig::Fsol {
                eta: self.eta,
                lambda: self.lambda,
            },
            Algo::Sgdm => LearnerConfig::Sgdm {
                rate: self.rate.unwrap_or(LearnerConfig::DEFAULT_SGD_RATE),
                momentum: self.momentum,
            },
            Algo::Adagrad => LearnerConfig::Adagrad {
                rate: self.rate.unwrap_or(LearnerConfig::DEFAULT_ADAGRAD_RATE),
            },
            Algo::Tgd => LearnerConfig::Tgd {
                rate: self.rate.unwrap_or(LearnerConfig::DEFAULT_TGD_RATE),
                gravity: self.gravity,
                period: self.period,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EnsembleArgs {
    /// Track a weighted-reservoir ensemble.
    #[arg(long, group = "ens")]
    pub wrs: bool,
    /// Track the K longest-surviving candidates.
    #[arg(long, group = "ens")]
    pub topk: bool,
    /// Track a moving average of the last K iterates.
    #[arg(long, group = "ens")]
    pub movavg: bool,
    /// Track an exponential iterate average with --gamma.
    #[arg(long, group = "ens")]
    pub expavg: bool,
    /// Reservoir / window size.
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
    #[arg(long, value_enum)]
    pub averaging: Option<AveragingArg>,
    /// Zero coordinates that a strict majority of candidates hold at zero.
    #[arg(long)]
    pub voting_zero: bool,
}

impl EnsembleArgs {
    pub fn spec(&self) -> CliResult<EnsembleSpec> {
        let sampled = self.wrs || self.topk;
        if !sampled {
            if self.voting_zero {
                return Err(usage("--voting-zero requires --wrs or --topk"));
            }
            if self.weighting.is_some() || self.averaging.is_some() {
                return Err(usage("--weighting/--averaging require --wrs or --topk"));
            }
        }
        let weighting = match self.weighting.unwrap_or(WeightingArg::Standard) {
            WeightingArg::Standard => Weighting::Standard,
            WeightingArg::Exponential => Weighting::Exponential,
        };
        let averaging = match self.averaging.unwrap_or(AveragingArg::Simple) {
            AveragingArg::Simple => Averaging::Simple,
            AveragingArg::Weighted => Averaging::Weighted,
        };
        let k = self.k;
        Ok(if self.wrs {
            EnsembleSpec::Wrs {
                k,
                weighting,
                averaging,
                voting_zero: self.voting_zero,
            }
        } else if self.topk {
            EnsembleSpec::TopK {
                k,
                weighting,
                averaging,
                voting_zero: self.voting_zero,
            }
        } else if self.movavg {
            EnsembleSpec::MovingAvg { k }
        } else if self.expavg {
            EnsembleSpec::ExpAvg { gamma: self.gamma }
        } else {
            EnsembleSpec::None
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrialArgs {
    /// Comma-separated trial seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
    pub seeds: Vec<u64>,
    /// Target number of evenly spaced checkpoints.
    #[arg(long, default_value_t = DEFAULT_CHECKPOINTS)]
    pub checkpoints: usize,
    /// Evaluate on only the first N test examples of each split.
    #[arg(long)]
    pub eval_subsample: Option<usize>,
    /// Worker threads (default: hardware threads).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON file whose keys are flag names; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[command(flatten)]
    pub trials: TrialArgs,
    /// Metrics CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the full traces as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[command(flatten)]
    pub trials: TrialArgs,
    /// C_err values for pac / pa1 (default: decades 1e-3..1e3).
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
    /// FSOL eta values (default: powers of two 2^-3..2^9).
    #[arg(long, value_delimiter = ',')]
    pub eta_grid: Option<Vec<f64>>,
    /// FSOL lambda values (default: 0 and decades 1e-3..1e3).
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Per-cell results CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub n: usize,
    /// Label flip probability, in [0, 0.5).
    #[arg(long, default_value_t = 0.0)]
    pub flip: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Minimum |<u, x>| of a generated example.
    #[arg(long, default_value_t = SynthConfig::DEFAULT_MARGIN)]
    pub margin: f64,
    /// Expected fraction of nonzero features per example.
    #[arg(long, default_value_t = SynthConfig::DEFAULT_DENSITY)]
    pub density: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Metrics CSVs, one per dataset, covering the same seeds.
    #[arg(required = true, num_args = 2..)]
    pub files: Vec<PathBuf>,
    #[arg(long, default_value = "wrs")]
    pub treatment: String,
    #[arg(long, default_value = "base")]
    pub control: String,
    /// Per-dataset table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
}

/// One line of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub timestep: u64,
    pub model: String,
    pub test_acc: f64,
    pub sparsity: f64,
}

/// Rows for one trace: base, ensemble (if tracked) and oracle at each checkpoint.
///
/// Oracle sparsity is the base sparsity at the checkpoint where the running maximum was reached.
pub fn trace_rows(trace: &RunTrace) -> Vec<MetricsRow> {
    let tag = trace.ensemble.tag();
    let mut rows = Vec::with_capacity(trace.checkpoints.len() * 3);
    let mut best: Option<(f64, f64)> = None;
    for cp in &trace.checkpoints {
        if best.is_none_or(|(acc, _)| cp.base_acc > acc) {
            best = Some((cp.base_acc, cp.base_sparsity));
        }
        let row = |model: &str, test_acc, sparsity| MetricsRow {
            seed: trace.seed,
            timestep: cp.timestep,
            model: model.to_string(),
            test_acc,
            sparsity,
        };
        rows.push(row("base", cp.base_acc, cp.base_sparsity));
        if let (Some(tag), Some(a), Some(s)) = (tag, cp.ensemble_acc, cp.ensemble_sparsity) {
            rows.push(row(tag, a, s));
        }
        let (oa, os) = best.expect("set above");
        rows.push(row("oracle", oa, os));
    }
    rows
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), WatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.timestep.to_string(),
            r.model.clone(),
            format!("{:.6}", r.test_acc),
            format!("{:.6}", r.sparsity),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, WatError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(WatError::Mismatch(format!(
            "{}: expected header {}",
            path.display(),
            CSV_HEADER.join(",")
        )));
    }
    Ok(r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}

/// Mean per-seed ROP of `tag` against the oracle rows, with the seeds found.
pub fn rop_by_seed(rows: &[MetricsRow], tag: &str) -> Result<BTreeMap<u64, f64>, WatError> {
    let mut series: BTreeMap<(u64, &str), Vec<(u64, f64)>> = BTreeMap::new();
    for r in rows {
        series
            .entry((r.seed, r.model.as_str()))
            .or_default()
            .push((r.timestep, r.test_acc));
    }
    let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    let mut out = BTreeMap::new();
    for seed in seeds {
        let oracle = series
            .get(&(seed, "oracle"))
            .ok_or_else(|| WatError::Mismatch(format!("seed {seed} has no oracle rows")))?;
        let model = series
            .get(&(seed, tag))
            .ok_or_else(|| WatError::Mismatch(format!("seed {seed} has no '{tag}' rows")))?;
        if oracle.len() != model.len() || oracle.iter().zip(model).any(|(a, b)| a.0 != b.0) {
            return Err(WatError::Mismatch(format!(
                "seed {seed}: '{tag}' and oracle timesteps differ"
            )));
        }
        let gaps: Vec<f64> = oracle.iter().zip(model).map(|(o, m)| o.1 - m.1).collect();
        out.insert(seed, mean(&gaps));
    }
    Ok(out)
}

/// Rewrites `args` so keys of the JSON object in `--config` come before the command-line flags.
///
/// `true` becomes a bare flag, `false`/`null` are dropped, arrays are comma-joined.
pub fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => {
                let p = it.next().ok_or_else(|| usage("--config needs a path"))?;
                path = Some(PathBuf::from(p));
            }
            Some(s) if s.starts_with("--config=") => path = Some(PathBuf::from(&s[9..])),
            _ => rest.push(a),
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(usage("config file must hold a JSON object"));
    };
    let mut injected = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &Value| match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(usage(format!("config key '{key}' has an unsupported value"))),
        };
        match &v {
            Value::Bool(true) => injected.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let joined = items.iter().map(scalar).collect::<CliResult<Vec<_>>>()?;
                injected.push(flag);
                injected.push(joined.join(","));
            }
            other => {
                injected.push(flag);
                injected.push(scalar(other)?);
            }
        }
    }
    // program name and subcommand stay in front
    if rest.len() < 2 {
        return Err(usage("--config must follow a subcommand"));
    }
    let tail = rest.split_off(2);
    rest.extend(injected.into_iter().map(OsString::from));
    rest.extend(tail);
    Ok(rest)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute<W: Write>(command: Command, out: &mut W) -> CliResult<()> {
    match command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Compare(a) => cmd_compare(&a, out),
        Command::Stats(a) => cmd_stats(&a, out),
    }
}

struct Loaded {
    data: Dataset,
    test: Option<Vec<Example>>,
    dim: usize,
}

fn load(args: &DataArgs) -> CliResult<Loaded> {
    for p in std::iter::once(&args.dataset).chain(&args.test) {
        if !p.is_file() {
            return Err(usage(format!("dataset not found: {}", p.display())));
        }
    }
    if !(args.split > 0.0 && args.split < 1.0) && args.test.is_none() {
        return Err(usage("--split must lie in (0, 1)"));
    }
    let data = read_libsvm(&args.dataset, args.dim)?;
    let test = match &args.test {
        Some(p) => Some(read_libsvm(p, args.dim)?),
        None => None,
    };
    let dim = data.dim.max(test.as_ref().map_or(0, |t| t.dim));
    Ok(Loaded {
        data,
        test: test.map(|t| t.examples),
        dim,
    })
}

fn trial(loaded: &Loaded, split: f64, cfg: &RunConfig) -> Result<RunTrace, WatError> {
    match &loaded.test {
        Some(test) => {
            let (order, _) = split_indices(loaded.data.len(), 1.0, cfg.seed)?;
            let train: Vec<Example> = order.iter().map(|&i| loaded.data.examples[i].clone()).collect();
            run(cfg, &train, test, loaded.dim)
        }
        None => {
            let s = split_and_shuffle(&loaded.data, split, cfg.seed)?;
            run(cfg, &s.train, &s.test, loaded.dim)
        }
    }
}

fn pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        b = b.num_threads(j);
    }
    b.build()
        .map_err(|e| CliError::Runtime(WatError::InvalidParameter(e.to_string())))
}

fn base_config(learner: LearnerConfig, ensemble: EnsembleSpec, t: &TrialArgs, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(learner, ensemble, seed);
    c.checkpoints = t.checkpoints;
    c.eval_subsample = t.eval_subsample;
    c
}

fn check_trials(t: &TrialArgs) -> CliResult<()> {
    if t.seeds.is_empty() {
        return Err(usage("--seeds must list at least one seed"));
    }
    let unique: BTreeSet<_> = t.seeds.iter().collect();
    if unique.len() != t.seeds.len() {
        return Err(usage("--seeds contains duplicates"));
    }
    if t.checkpoints < 2 {
        return Err(usage("--checkpoints must be at least 2"));
    }
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn cmd_run<W: Write>(args: &RunArgs, out: &mut W) -> CliResult<()> {
    let spec = args.ensemble.spec()?;
    check_trials(&args.trials)?;
    let learner = args.learner.config();
    learner.validate().map_err(|e| usage(e.to_string()))?;
    let loaded = load(&args.data)?;
    let configs: Vec<RunConfig> = args
        .trials
        .seeds
        .iter()
        .map(|&s| base_config(learner, spec, &args.trials, s))
        .collect();
    for c in &configs {
        c.validate().map_err(|e| usage(e.to_string()))?;
    }
    let traces = pool(args.trials.jobs)?.install(|| {
        configs
            .par_iter()
            .map(|c| trial(&loaded, args.data.split, c))
            .collect::<Result<Vec<_>, _>>()
    })?;

    if let Some(path) = &args.out {
        let rows: Vec<MetricsRow> = traces.iter().flat_map(trace_rows).collect();
        write_metrics(create(path)?, &rows)?;
    }
    if let Some(path) = &args.json {
        let mut f = create(path)?;
        serde_json::to_writer_pretty(&mut f, &traces).map_err(WatError::from)?;
        f.flush()?;
    }
    let summary = run_summary(&traces, &loaded);
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).map_err(WatError::from)?)?;
    Ok(())
}

fn run_summary(traces: &[RunTrace], loaded: &Loaded) -> Value {
    let per_seed: Vec<Value> = traces
        .iter()
        .map(|t| {
            json!({
                "seed": t.seed,
                "final_base_acc": t.summary.final_base_acc,
                "final_base_sparsity": t.summary.final_base_sparsity,
                "rop_base": t.summary.rop_base,
                "final_ensemble_acc": t.summary.final_ensemble_acc,
                "final_ensemble_sparsity": t.summary.final_ensemble_sparsity,
                "rop_ensemble": t.summary.rop_ensemble,
                "aggressive_steps": t.summary.aggressive_steps,
            })
        })
        .collect();
    let avg = |f: &dyn Fn(&RunTrace) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = traces.iter().map(f).collect();
        v.map(|v| mean(&v))
    };
    let first = &traces[0];
    json!({
        "algo": first.learner,
        "ensemble": first.ensemble,
        "dim": loaded.dim,
        "n_examples": loaded.data.len(),
        "seeds": per_seed,
        "mean": {
            "final_base_acc": avg(&|t| Some(t.summary.final_base_acc)),
            "final_base_sparsity": avg(&|t| Some(t.summary.final_base_sparsity)),
            "rop_base": avg(&|t| Some(t.summary.rop_base)),
            "final_ensemble_acc": avg(&|t| t.summary.final_ensemble_acc),
            "final_ensemble_sparsity": avg(&|t| t.summary.final_ensemble_sparsity),
            "rop_ensemble": avg(&|t| t.summary.rop_ensemble),
        }
    })
}

/// Mean metrics of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub learner: LearnerConfig,
    pub mean_final_acc: f64,
    pub mean_rop: f64,
    pub mean_final_sparsity: f64,
    pub mean_ensemble_rop: Option<f64>,
}

/// Among the top `ceil(2.5%)` of cells by mean final accuracy, the one with the highest mean
/// ROP. Earlier cells win ties.
pub fn select_cell(cells: &[CellResult]) -> Option<usize> {
    if cells.is_empty() {
        return None;
    }
    let top = ((cells.len() as f64) * 0.025).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| cells[b].mean_final_acc.total_cmp(&cells[a].mean_final_acc).then(a.cmp(&b)));
    order[..top]
        .iter()
        .copied()
        .reduce(|best, i| {
            match cells[i].mean_rop.total_cmp(&cells[best].mean_rop) {
                std::cmp::Ordering::Greater => i,
                std::cmp::Ordering::Equal if i < best => i,
                _ => best,
            }
        })
}

fn grid_cells(args: &SweepArgs) -> CliResult<Vec<LearnerConfig>> {
    let base = args.learner.config();
    let cells: Vec<LearnerConfig> = match args.learner.algo {
        Algo::Pac | Algo::Pa1 => args
            .c_grid
            .clone()
            .unwrap_or_else(c_err_grid)
            .into_iter()
            .map(|c_err| match args.learner.algo {
                Algo::Pac => LearnerConfig::Pac { c_err },
                _ => LearnerConfig::Pa1 { c_err },
            })
            .collect(),
        Algo::Fsol => {
            let etas = args.eta_grid.clone().unwrap_or_else(eta_grid);
            let lambdas = args.lambda_grid.clone().unwrap_or_else(lambda_grid);
            etas.iter()
                .flat_map(|&eta| lambdas.iter().map(move |&lambda| LearnerConfig::Fsol { eta, lambda }))
                .collect()
        }
        _ => vec![base],
    };
    if cells.is_empty() {
        return Err(usage("empty grid"));
    }
    for c in &cells {
        c.validate().map_err(|e| usage(e.to_string()))?;
    }
    Ok(cells)
}

pub fn cmd_sweep<W: Write>(args: &SweepArgs, out: &mut W) -> CliResult<()> {
    let spec = args.ensemble.spec()?;
    check_trials(&args.trials)?;
    let cells = grid_cells(args)?;
    let loaded = load(&args.data)?;
    let jobs: Vec<RunConfig> = cells
        .iter()
        .flat_map(|&l| args.trials.seeds.iter().map(move |&s| (l, s)))
        .map(|(l, s)| base_config(l, spec, &args.trials, s))
        .collect();
    let traces = pool(args.trials.jobs)?.install(|| {
        jobs.par_iter()
            .map(|c| trial(&loaded, args.data.split, c))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let per_cell = args.trials.seeds.len();
    let results: Vec<CellResult> = cells
        .iter()
        .zip(traces.chunks(per_cell))
        .map(|(&learner, ts)| {
            let pick = |f: &dyn Fn(&RunTrace) -> f64| mean(&ts.iter().map(f).collect::<Vec<_>>());
            let ens: Option<Vec<f64>> = ts.iter().map(|t| t.summary.rop_ensemble).collect();
            CellResult {
                learner,
                mean_final_acc: pick(&|t| t.summary.final_base_acc),
                mean_rop: pick(&|t| t.summary.rop_base),
                mean_final_sparsity: pick(&|t| t.summary.final_base_sparsity),
                mean_ensemble_rop: ens.map(|v| mean(&v)),
            }
        })
        .collect();
    let selected = select_cell(&results).expect("grid is non-empty");

    if let Some(path) = &args.out {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["cell", "config", "mean_final_acc", "mean_rop", "mean_final_sparsity", "mean_ensemble_rop"])
            .map_err(WatError::from)?;
        for (i, r) in results.iter().enumerate() {
            w.write_record([
                i.to_string(),
                serde_json::to_string(&r.learner).map_err(WatError::from)?,
                format!("{:.6}", r.mean_final_acc),
                format!("{:.6}", r.mean_rop),
                format!("{:.6}", r.mean_final_sparsity),
                r.mean_ensemble_rop.map_or(String::new(), |v| format!("{v:.6}")),
            ])
            .map_err(WatError::from)?;
        }
        w.flush()?;
    }
    let summary = json!({
        "cells": results.len(),
        "seeds": args.trials.seeds,
        "selected": selected,
        "selected_config": results[selected].learner,
        "selected_result": results[selected],
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).map_err(WatError::from)?)?;
    Ok(())
}

pub fn cmd_synth<W: Write>(args: &SynthArgs, out: &mut W) -> CliResult<()> {
    let cfg = SynthConfig {
        dim: args.dim,
        n: args.n,
        flip_prob: args.flip,
        margin: args.margin,
        density: args.density,
        seed: args.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let data = synth_noisy_stream(&cfg)?;
    let mut f = create(&args.out)?;
    write_libsvm(&mut f, &data.dataset.examples)?;
    f.flush()?;
    let mut sidecar = args.out.clone().into_os_string();
    sidecar.push(".json");
    let meta = json!({
        "generator": "synth_noisy_stream",
        "config": cfg,
        "flipped": data.flipped_count(),
    });
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta).map_err(WatError::from)?)?;
    writeln!(out, "wrote {} examples to {}", args.n, args.out.display())?;
    Ok(())
}

/// Per-dataset comparison line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub dataset: String,
    pub rop_treatment: f64,
    pub rop_control: f64,
    pub delta: f64,
}

pub fn compare_files(files: &[PathBuf], treatment: &str, control: &str) -> Result<(Vec<CompareRow>, Value), WatError> {
    let mut rows = Vec::new();
    let mut seeds_seen: Option<(PathBuf, BTreeSet<u64>)> = None;
    for path in files {
        let metrics = read_metrics(path)?;
        let t = rop_by_seed(&metrics, treatment)?;
        let c = rop_by_seed(&metrics, control)?;
        let seeds: BTreeSet<u64> = t.keys().copied().collect();
        match &seeds_seen {
            Some((first, s)) if *s != seeds => {
                return Err(WatError::Mismatch(format!(
                    "{} and {} cover different seeds",
                    first.display(),
                    path.display()
                )))
            }
            None => seeds_seen = Some((path.clone(), seeds)),
            _ => {}
        }
        let rt = mean(&t.values().copied().collect::<Vec<_>>());
        let rc = mean(&c.values().copied().collect::<Vec<_>>());
        rows.push(CompareRow {
            dataset: path.display().to_string(),
            rop_treatment: rt,
            rop_control: rc,
            delta: rt - rc,
        });
    }
    let wins = rows.iter().filter(|r| r.delta < 0.0).count();
    let losses = rows.iter().filter(|r| r.delta > 0.0).count();
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.rop_treatment, r.rop_control)).collect();
    let nonzero = rows.iter().filter(|r| r.delta != 0.0).count();
    let test = if nonzero >= WILCOXON_MIN_N {
        let w = wilcoxon_signed_rank(&pairs)?;
        json!({"statistic": w.statistic, "p_value": w.p_value, "n": w.n, "exact": w.exact})
    } else {
        json!({"degenerate": true, "nonzero_differences": nonzero, "required": WILCOXON_MIN_N})
    };
    let summary = json!({
        "treatment": treatment,
        "control": control,
        "datasets": rows.len(),
        "wins": wins,
        "losses": losses,
        "ties": rows.len() - wins - losses,
        "wilcoxon": test,
        "rows": rows,
    });
    Ok((rows, summary))
}

pub fn cmd_compare<W: Write>(args: &CompareArgs, out: &mut W) -> CliResult<()> {
    for p in &args.files {
        if !p.is_file() {
            return Err(usage(format!("metrics file not found: {}", p.display())));
        }
    }
    let (rows, summary) = compare_files(&args.files, &args.treatment, &args.control)?;
    if let Some(path) = &args.out {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["dataset", "rop_treatment", "rop_control", "delta"])
            .map_err(WatError::from)?;
        for r in &rows {
            w.write_record([
                r.dataset.clone(),
                format!("{:.6}", r.rop_treatment),
                format!("{:.6}", r.rop_control),
                format!("{:.6}", r.delta),
            ])
            .map_err(WatError::from)?;
        }
        w.flush()?;
    }
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).map_err(WatError::from)?)?;
    Ok(())
}

pub fn cmd_stats<W: Write>(args: &StatsArgs, out: &mut W) -> CliResult<()> {
    if !args.dataset.is_file() {
        return Err(usage(format!("dataset not found: {}", args.dataset.display())));
    }
    let stats = compute_stats(LibsvmReader::open(&args.dataset)?, args.dim)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&stats).map_err(WatError::from)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(acc: f64, rop: f64) -> CellResult {
        CellResult {
            learner: LearnerConfig::Pac { c_err: 1.0 },
            mean_final_acc: acc,
            mean_rop: rop,
            mean_final_sparsity: 0.0,
            mean_ensemble_rop: None,
        }
    }

    #[test]
    fn selection_rule() {
        assert_eq!(select_cell(&[cell(0.5, 0.1)]), Some(0));
        // 7 cells: only the single most accurate qualifies
        let cells: Vec<_> = (0..7).map(|i| cell(0.5 + i as f64 * 0.01, 0.1 - i as f64 * 0.01)).collect();
        assert_eq!(select_cell(&cells), Some(6));
        // 104 cells: top 3 by accuracy, highest ROP among them
        let mut cells: Vec<_> = (0..104).map(|_| cell(0.5, 0.0)).collect();
        cells[10] = cell(0.9, 0.01);
        cells[20] = cell(0.89, 0.05);
        cells[30] = cell(0.88, 0.03);
        cells[40] = cell(0.87, 0.5);
        assert_eq!(select_cell(&cells), Some(20));
        assert_eq!(select_cell(&[]), None);
    }

    #[test]
    fn config_keys_precede_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"k": 16, "wrs": true, "voting_zero": false, "seeds": [1, 2]}"#).unwrap();
        let args: Vec<OsString> = ["wat", "run", "--config", p.to_str().unwrap(), "--k", "4"]
            .iter()
            .map(OsString::from)
            .collect();
        let expanded = expand_config(args).unwrap();
        let s: Vec<&str> = expanded.iter().map(|a| a.to_str().unwrap()).collect();
        assert_eq!(s, ["wat", "run", "--k", "16", "--seeds", "1,2", "--wrs", "--k", "4"]);
        let cli = Cli::try_parse_from(expanded.iter().chain([&OsString::from("--dataset"), &OsString::from("x")])).unwrap();
        let Command::Run(r) = cli.command else { panic!() };
        assert_eq!(r.ensemble.k, 4);
        assert!(r.ensemble.wrs);
        assert_eq!(r.trials.seeds, vec![1, 2]);
    }

    #[test]
    fn voting_zero_needs_sampling_ensemble() {
        let cli = Cli::try_parse_from(["wat", "run", "--dataset", "x", "--voting-zero"]).unwrap();
        let Command::Run(r) = cli.command else { panic!() };
        assert!(matches!(r.ensemble.spec(), Err(CliError::Usage(_))));
        assert!(Cli::try_parse_from(["wat", "run", "--dataset", "x", "--wrs", "--topk"]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricsRow { seed: 1, timestep: 0, model: "base".into(), test_acc: 0.5, sparsity: 1.0 },
            MetricsRow { seed: 1, timestep: 0, model: "wrs".into(), test_acc: 0.123456, sparsity: 0.25 },
            MetricsRow { seed: 1, timestep: 0, model: "oracle".into(), test_acc: 0.5, sparsity: 1.0 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(File::create(&p).unwrap(), &rows).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("seed,timestep,model,test_acc,sparsity\n1,0,base,0.500000,1.000000\n"));
    }

    #[test]
    fn rop_from_rows() {
        let row = |t, m: &str, a| MetricsRow { seed: 3, timestep: t, model: m.into(), test_acc: a, sparsity: 0.0 };
        let rows = vec![
            row(0, "base", 0.9), row(0, "oracle", 0.9), row(0, "wrs", 0.8),
            row(5, "base", 0.7), row(5, "oracle", 0.9), row(5, "wrs", 1.0),
        ];
        let base = rop_by_seed(&rows, "base").unwrap();
        assert!((base[&3] - 0.1).abs() < 1e-12);
        assert!(rop_by_seed(&rows, "wrs").unwrap()[&3].abs() < 1e-12);
        assert!(rop_by_seed(&rows, "topk").is_err());
    }
}
