//! Command-line surface: argument definitions and command dispatch.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use projwass::iprw::{IprwContext, Regime};
use projwass::projections::ProjectionSet;
use projwass::prw::{argmax_set, default_argmax_tolerance, prw_regularized, PrwOptions};
use projwass::resampling::{prw_confidence_interval, sliced_test_with_context, BootstrapConfig, ReplacementRule, EMPTY_CELL_MASS};
use projwass::SeedStream;

use crate::error::{CliError, CliResult};
use crate::experiments::{run_experiment, ExperimentConfig, Protocol};
use crate::ingest::{ingest_pair, Binning, Dataset, DatasetSpec, GridQuantization};
use crate::report::ReportDocument;

#[derive(Debug, Parser)]
#[command(name = "projwass", version, about = "Projection-based Wasserstein distances, limit laws and bootstrap inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integral projection robust (sliced for k = 1) distance between two measures.
    Iprw(IprwArgs),
    /// Regularized projection robust distance by multi-start Riemannian ascent.
    Prw(PrwArgs),
    /// Two-sample test of equal distributions with the sliced statistic.
    Test(TestArgs),
    /// Bootstrap confidence interval for the regularized projection robust distance.
    Ci(CiArgs),
    /// Run a simulation protocol and write its report and plot data.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// First measure: samples .csv, histogram .json, or grid:L:SEED[:N] / slab:M:SEED[:N].
    #[arg(long)]
    pub x: String,
    /// Second measure, same forms as --x.
    #[arg(long)]
    pub y: String,
    /// CSV of support points that sample rows must match exactly.
    #[arg(long)]
    pub support: Option<PathBuf>,
    /// Snap sample rows to a lattice, LOWER:UPPER:LEVELS per axis.
    #[arg(long)]
    pub quantize: Option<GridQuantization>,
}

impl DataArgs {
    fn specs(&self) -> CliResult<(DatasetSpec, DatasetSpec)> {
        let support = match &self.support {
            Some(path) => Some(crate::ingest::read_points_csv(path)?),
            None => None,
        };
        let binning = match &self.quantize {
            Some(q) => Binning::Grid(q.clone()),
            None => Binning::None,
        };
        let make = |token: &str| -> CliResult<DatasetSpec> {
            Ok(DatasetSpec {
                source: DatasetSpec::parse_source(token)?,
                support: support.clone(),
                binning: binning.clone(),
            })
        };
        Ok((make(&self.x)?, make(&self.y)?))
    }

    fn load(&self) -> CliResult<(DatasetSpec, DatasetSpec, Dataset, Dataset)> {
        let (sx, sy) = self.specs()?;
        let (a, b) = ingest_pair(&sx, &sy)?;
        Ok((sx, sy, a, b))
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output path (report JSON, or a directory for experiments); stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct IprwArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Number T of uniform frames.
    #[arg(long, default_value_t = 128)]
    pub frames: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PrwArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 128)]
    pub frames: usize,
    /// Replacement rule: n, n^4/5, n^2/3, n^1/2, or an explicit l.
    #[arg(long = "ell-rule", default_value = "n^1/2")]
    pub ell_rule: String,
    /// Bootstrap replicates B.
    #[arg(long = "B", default_value_t = 500)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long = "ell-rule", default_value = "n^1/2")]
    pub ell_rule: String,
    #[arg(long = "B", default_value_t = 500)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// iprw-null-convergence, iprw-alt-convergence, prw-convergence, bootstrap-compare or test-level-power.
    pub protocol: String,
    /// JSON object overriding protocol defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "L")]
    pub grid_side: Option<usize>,
    #[arg(long = "M")]
    pub slab_levels: Option<usize>,
    /// Comma-separated sample sizes.
    #[arg(long = "n-list", value_delimiter = ',')]
    pub sample_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long = "limit-draws")]
    pub limit_draws: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated replacement rules.
    #[arg(long = "ell-rule", value_delimiter = ',')]
    pub ell_rules: Option<Vec<String>>,
    #[arg(long = "B")]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// null or alternative (bootstrap-compare).
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for report.json and the CSV tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a command produced: a report, plus plot tables for experiments.
pub struct Outcome {
    pub report: ReportDocument,
    pub tables: Vec<crate::report::PlotTable>,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DataConfig<'a> {
    x: &'a DatasetSpec,
    y: &'a DatasetSpec,
}

fn document(
    command: &[String],
    config: &impl Serialize,
    seed: u64,
    results: &impl Serialize,
    start: Instant,
    warnings: Vec<String>,
) -> CliResult<ReportDocument> {
    ReportDocument::new(
        command.to_vec(),
        config,
        BTreeMap::from([("seed".to_string(), seed)]),
        results,
        start.elapsed().as_secs_f64(),
        warnings,
    )
}

fn samples_of(d: &Dataset, which: &str) -> CliResult<Vec<usize>> {
    d.samples()
        .map(<[usize]>::to_vec)
        .ok_or_else(|| CliError::input(format!("--{which} must provide samples, not a histogram")))
}

fn parse_rule(s: &str) -> CliResult<ReplacementRule> {
    Ok(s.parse::<ReplacementRule>()?)
}

fn run_iprw(a: &IprwArgs, command: &[String]) -> CliResult<ReportDocument> {
    let start = Instant::now();
    let (sx, sy, x, y) = a.data.load()?;
    let set = ProjectionSet::uniform(x.space.dim(), a.k, a.frames, SeedStream::new(a.out.seed))?;
    let ctx = IprwContext::new(&x.space, a.p, Arc::new(set))?;
    let est = ctx.distance(&x.histogram()?, &y.histogram()?)?;
    let results = serde_json::json!({
        "distance": est.value,
        "pth_power": est.pth_power(),
        "frame_standard_error": est.frame_standard_error(),
        "frames": a.frames,
        "support_size": x.space.len(),
    });
    let config = serde_json::json!({
        "data": DataConfig { x: &sx, y: &sy },
        "p": a.p, "k": a.k, "frames": a.frames, "seed": a.out.seed,
    });
    document(command, &config, a.out.seed, &results, start, Vec::new())
}

fn run_prw(a: &PrwArgs, command: &[String]) -> CliResult<ReportDocument> {
    let start = Instant::now();
    let (sx, sy, x, y) = a.data.load()?;
    let mut warnings = Vec::new();
    let (r, s) = (x.histogram()?, y.histogram()?);
    if !r.is_strictly_positive() || !s.is_strictly_positive() {
        warnings.push("empty cells were given a tiny mass before the ascent".to_string());
    }
    let opts = PrwOptions {
        k: a.k,
        restarts: a.restarts,
        seed: a.out.seed,
        ..PrwOptions::default()
    };
    let sol = prw_regularized(&r.floored(EMPTY_CELL_MASS)?, &s.floored(EMPTY_CELL_MASS)?, &x.space, a.p, a.lambda, &opts)?;
    let psi = argmax_set(&sol, default_argmax_tolerance(&sol));
    let frame: Vec<Vec<f64>> = (0..sol.best_frame.k())
        .map(|j| sol.best_frame.matrix().column(j).iter().copied().collect())
        .collect();
    let results = serde_json::json!({
        "distance": sol.value,
        "best_frame_columns": frame,
        "argmax_modes": psi.len(),
        "restart_values": sol.candidates.iter().map(|c| c.value).collect::<Vec<_>>(),
        "iterations": sol.iterations,
        "converged_restarts": sol.candidates.iter().filter(|c| c.converged).count(),
    });
    let config = serde_json::json!({
        "data": DataConfig { x: &sx, y: &sy },
        "p": a.p, "lambda": a.lambda, "options": opts,
    });
    document(command, &config, a.out.seed, &results, start, warnings)
}

fn run_test(a: &TestArgs, command: &[String]) -> CliResult<ReportDocument> {
    let start = Instant::now();
    let (sx, sy, x, y) = a.data.load()?;
    let (xs, ys) = (samples_of(&x, "x")?, samples_of(&y, "y")?);
    let seed = SeedStream::new(a.out.seed);
    let set = ProjectionSet::uniform(x.space.dim(), a.k, a.frames, seed.derive_named("frames"))?;
    let ctx = IprwContext::new(&x.space, a.p, Arc::new(set))?;
    let cfg = BootstrapConfig {
        rule: parse_rule(&a.ell_rule)?,
        replicates: a.replicates,
        seed: seed.derive_named("bootstrap").seed(),
        centered: false,
    };
    let report = sliced_test_with_context(&xs, &ys, &ctx, a.alpha, &cfg)?;
    let config = serde_json::json!({
        "data": DataConfig { x: &sx, y: &sy },
        "p": a.p, "k": a.k, "frames": a.frames, "alpha": a.alpha, "bootstrap": cfg, "seed": a.out.seed,
    });
    let warnings = report.warnings.clone();
    document(command, &config, a.out.seed, &report, start, warnings)
}

fn run_ci(a: &CiArgs, command: &[String]) -> CliResult<ReportDocument> {
    let start = Instant::now();
    let (sx, sy, x, y) = a.data.load()?;
    let (xs, ys) = (samples_of(&x, "x")?, samples_of(&y, "y")?);
    let seed = SeedStream::new(a.out.seed);
    let cfg = BootstrapConfig {
        rule: parse_rule(&a.ell_rule)?,
        replicates: a.replicates,
        seed: seed.derive_named("bootstrap").seed(),
        centered: true,
    };
    let opts = PrwOptions {
        k: a.k,
        restarts: a.restarts,
        seed: seed.derive_named("restarts").seed(),
        ..PrwOptions::default()
    };
    let ci = prw_confidence_interval(&xs, &ys, &x.space, a.p, a.lambda, a.alpha, &cfg, &opts)?;
    let config = serde_json::json!({
        "data": DataConfig { x: &sx, y: &sy },
        "p": a.p, "lambda": a.lambda, "alpha": a.alpha, "bootstrap": cfg, "options": opts, "seed": a.out.seed,
    });
    let warnings = ci.warnings.clone();
    document(command, &config, a.out.seed, &ci, start, warnings)
}

fn experiment_config(a: &ExperimentArgs, protocol: Protocol) -> CliResult<ExperimentConfig> {
    let overrides = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?
        }
        None => serde_json::json!({}),
    };
    let mut cfg = ExperimentConfig::merged(protocol, &overrides)?;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = &a.$field { cfg.$field = v.clone(); })* };
    }
    set!(grid_side, slab_levels, sample_sizes, reps, limit_draws, frames, lambda, k, alpha, runs, trials, seed);
    if let Some(p) = a.p {
        cfg.p = Some(p);
    }
    if let Some(b) = a.replicates {
        cfg.bootstrap_replicates = b;
    }
    if let Some(rules) = &a.ell_rules {
        cfg.rules = rules.iter().map(|s| parse_rule(s)).collect::<CliResult<_>>()?;
    }
    if let Some(regime) = &a.regime {
        cfg.regime = match regime.to_ascii_lowercase().as_str() {
            "null" => Regime::Null,
            "alternative" | "alt" => Regime::Alternative,
            _ => return Err(CliError::input(format!("regime must be null or alternative, got '{regime}'"))),
        };
    }
    Ok(cfg)
}

/// Executes a parsed command line. `command` is echoed into the report.
pub fn execute(cli: &Cli, command: &[String]) -> CliResult<Outcome> {
    let single = |report: ReportDocument, out: &OutArgs| Outcome {
        report,
        tables: Vec::new(),
        out: out.out.clone(),
    };
    Ok(match &cli.command {
        Command::Iprw(a) => single(run_iprw(a, command)?, &a.out),
        Command::Prw(a) => single(run_prw(a, command)?, &a.out),
        Command::Test(a) => single(run_test(a, command)?, &a.out),
        Command::Ci(a) => single(run_ci(a, command)?, &a.out),
        Command::Experiment(a) => {
            let protocol: Protocol = a.protocol.parse()?;
            let cfg = experiment_config(a, protocol)?;
            let out = run_experiment(protocol, &cfg, command.to_vec())?;
            Outcome {
                report: out.report,
                tables: out.tables,
                out: a.out.clone(),
            }
        }
    })
}

/// Writes the outcome: a JSON file, or for experiments a directory with
/// `report.json` and one CSV per table; prints the report if no path is set.
pub fn write_outcome(outcome: &Outcome, is_experiment: bool) -> CliResult<()> {
    match &outcome.out {
        None => {
            println!("{}", outcome.report.to_json());
            Ok(())
        }
        Some(path) if is_experiment => {
            std::fs::create_dir_all(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            outcome.report.write(&path.join("report.json"))?;
            outcome.tables.iter().try_for_each(|t| t.write_to_dir(path))
        }
        Some(path) => outcome.report.write(path),
    }
}
