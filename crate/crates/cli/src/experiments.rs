//! Simulation protocols: convergence of the empirical distances to their
//! limit laws, bootstrap comparisons, and level/power of the sliced test.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use projwass::iprw::{alternative_rate, null_rate, IprwContext, LimitSampleSet, Regime};
use projwass::ks::ks_distance;
use projwass::measures::dirichlet_flat;
use projwass::numeric::{mean, quantile_sorted};
use projwass::projections::ProjectionSet;
use projwass::prw::{argmax_set, default_argmax_tolerance, prw_limit_sampler, prw_regularized, PrwOptions};
use projwass::resampling::{
    rescaled_bootstrap_with_rate, sliced_test_with_context, sorted, two_sample_ell, BootstrapConfig,
    ReplacementRule, EMPTY_CELL_MASS,
};
use projwass::{GroundSpace, ProbVector, SeedStream};

use crate::error::{CliError, CliResult};
use crate::report::{PlotTable, ReportDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    IprwNullConvergence,
    IprwAltConvergence,
    PrwConvergence,
    BootstrapCompare,
    TestLevelPower,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::IprwNullConvergence,
        Protocol::IprwAltConvergence,
        Protocol::PrwConvergence,
        Protocol::BootstrapCompare,
        Protocol::TestLevelPower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::IprwNullConvergence => "iprw-null-convergence",
            Protocol::IprwAltConvergence => "iprw-alt-convergence",
            Protocol::PrwConvergence => "prw-convergence",
            Protocol::BootstrapCompare => "bootstrap-compare",
            Protocol::TestLevelPower => "test-level-power",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Protocol::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Protocol::ALL.iter().map(|p| p.name()).collect();
            CliError::input(format!("unknown protocol '{s}'; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `L` of the `L x L` grid (IPRW protocols).
    pub grid_side: usize,
    /// `M` of the slab space (PRW protocol).
    pub slab_levels: usize,
    pub sample_sizes: Vec<usize>,
    /// Monte-Carlo repetitions of the finite-sample statistic per size.
    pub reps: usize,
    pub limit_draws: usize,
    /// Number of uniform frames for IPRW.
    pub frames: usize,
    pub k: usize,
    /// Order; defaults to 1 for IPRW protocols and 2 for PRW.
    pub p: Option<f64>,
    pub lambda: f64,
    /// Random restarts for the population PRW ascent.
    pub restarts: usize,
    /// Random restarts per empirical PRW ascent, on top of starts at the population maximizers.
    pub replicate_restarts: usize,
    pub rules: Vec<ReplacementRule>,
    pub bootstrap_replicates: usize,
    pub alpha: f64,
    /// Monte-Carlo runs per rule and hypothesis (test-level-power).
    pub runs: usize,
    /// Independent repetitions of the whole comparison (bootstrap-compare).
    pub trials: usize,
    /// Null (`r = s`) or alternative (bootstrap-compare).
    pub regime: Regime,
    /// Probability levels in the Q-Q tables.
    pub qq_points: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid_side: 3,
            slab_levels: 3,
            sample_sizes: vec![25, 100, 1000],
            reps: 2000,
            limit_draws: 10_000,
            frames: 128,
            k: 1,
            p: None,
            lambda: 1.0,
            restarts: 8,
            replicate_restarts: 0,
            rules: ReplacementRule::POWERS.to_vec(),
            bootstrap_replicates: 500,
            alpha: 0.05,
            runs: 200,
            trials: 1,
            regime: Regime::Null,
            qq_points: 99,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Defaults adjusted to the protocol's usual setting.
    pub fn for_protocol(protocol: Protocol) -> Self {
        let base = ExperimentConfig::default();
        match protocol {
            Protocol::BootstrapCompare => ExperimentConfig {
                grid_side: 7,
                sample_sizes: vec![1000],
                ..base
            },
            Protocol::TestLevelPower => ExperimentConfig {
                grid_side: 7,
                sample_sizes: vec![1000],
                rules: vec![ReplacementRule::FourFifths, ReplacementRule::TwoThirds, ReplacementRule::Half],
                ..base
            },
            _ => base,
        }
    }

    /// Protocol defaults overlaid with the fields present in `overrides`.
    pub fn merged(protocol: Protocol, overrides: &Value) -> CliResult<Self> {
        let mut base = serde_json::to_value(Self::for_protocol(protocol)).expect("config serializes");
        let Value::Object(extra) = overrides else {
            return Err(CliError::input("experiment config must be a JSON object"));
        };
        let map = base.as_object_mut().expect("config is an object");
        for (k, v) in extra {
            map.insert(k.clone(), v.clone());
        }
        serde_json::from_value(base).map_err(|e| CliError::input(format!("experiment config: {e}")))
    }

    fn order(&self, protocol: Protocol) -> f64 {
        self.p.unwrap_or(if protocol == Protocol::PrwConvergence { 2.0 } else { 1.0 })
    }

    fn validate(&self) -> CliResult<()> {
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(CliError::input("sample sizes must be a nonempty list of positive integers"));
        }
        if self.reps < 2 || self.limit_draws < 2 {
            return Err(CliError::input("reps and limit_draws must be at least 2"));
        }
        if self.frames == 0 || self.k == 0 {
            return Err(CliError::input("frames and k must be positive"));
        }
        if self.qq_points == 0 {
            return Err(CliError::input("qq_points must be positive"));
        }
        Ok(())
    }
}

/// KS distance between the finite-sample law at size `n` and the limit law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub n: usize,
    pub ks: f64,
    pub finite_mean: f64,
    pub limit_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub population_value: f64,
    pub support_size: usize,
    pub p: f64,
    pub rows: Vec<KsRow>,
    /// Modes in the population argmax set (PRW only).
    pub modes: usize,
}

impl ConvergenceResult {
    pub fn ks(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ks).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleKs {
    pub rule: ReplacementRule,
    pub ell: usize,
    /// KS distance between the bootstrap law and the finite-sample law.
    pub ks_finite: f64,
    /// KS distance between the bootstrap law and the limit law.
    pub ks_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapTrial {
    pub trial: usize,
    pub ks_finite_limit: f64,
    pub rules: Vec<RuleKs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCompareResult {
    pub regime: Regime,
    pub n: usize,
    pub trials: Vec<BootstrapTrial>,
    /// For each rule, trials in which the naive bootstrap is farther from the
    /// finite-sample law than that rule.
    pub naive_worse: Vec<(ReplacementRule, usize)>,
}

impl BootstrapCompareResult {
    pub fn naive_worse_than(&self, rule: ReplacementRule) -> Option<usize> {
        self.naive_worse.iter().find(|(r, _)| *r == rule).map(|(_, c)| *c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub rule: ReplacementRule,
    pub ell: usize,
    pub null_rate: f64,
    pub alternative_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPowerResult {
    pub n: usize,
    pub alpha: f64,
    pub runs: usize,
    pub rows: Vec<RejectionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentResult {
    Convergence(ConvergenceResult),
    Bootstrap(BootstrapCompareResult),
    LevelPower(LevelPowerResult),
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub result: ExperimentResult,
    pub tables: Vec<PlotTable>,
    pub report: ReportDocument,
}

fn grid_instance(cfg: &ExperimentConfig, seed: SeedStream, regime: Regime) -> CliResult<(GroundSpace, ProbVector, ProbVector)> {
    let space = GroundSpace::grid(cfg.grid_side)?;
    let r = dirichlet_flat(space.len(), seed.derive_named("r"))?;
    let s = match regime {
        Regime::Null => r.clone(),
        Regime::Alternative => dirichlet_flat(space.len(), seed.derive_named("s"))?,
    };
    Ok((space, r, s))
}

fn frame_set(cfg: &ExperimentConfig, dim: usize, seed: SeedStream) -> CliResult<Arc<ProjectionSet>> {
    Ok(Arc::new(ProjectionSet::uniform(dim, cfg.k.min(dim), cfg.frames, seed.derive_named("frames"))?))
}

/// Finite-sample draws of the rescaled statistic for sample size `n = m`.
fn iprw_finite_law(
    ctx: &IprwContext,
    r: &ProbVector,
    s: &ProbVector,
    regime: Regime,
    n: usize,
    reps: usize,
    seed: SeedStream,
) -> CliResult<Vec<f64>> {
    let (rate, center) = match regime {
        Regime::Null => (null_rate(n, n, ctx.p()), 0.0),
        Regime::Alternative => (alternative_rate(n, n), ctx.distance(r, s)?.value),
    };
    (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed.derive(b as u64).rng();
            let rn = r.sample_empirical(n, &mut rng)?;
            let sn = s.sample_empirical(n, &mut rng)?;
            Ok(rate * (ctx.distance(&rn, &sn)?.value - center))
        })
        .collect::<projwass::Result<Vec<f64>>>()
        .map_err(CliError::from)
}

fn iprw_limit_law(
    ctx: &IprwContext,
    r: &ProbVector,
    s: &ProbVector,
    regime: Regime,
    draws: usize,
    seed: SeedStream,
) -> CliResult<LimitSampleSet> {
    Ok(match regime {
        Regime::Null => ctx.null_limit(r, draws, seed)?,
        Regime::Alternative => ctx.alternative_limit(r, s, 0.5, draws, seed)?,
    })
}

/// Quantiles of both samples at levels `i / (points + 1)`.
pub fn qq_pairs(a: &[f64], b: &[f64], points: usize) -> CliResult<Vec<(f64, f64, f64)>> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    Ok((1..=points)
        .map(|i| {
            let q = i as f64 / (points + 1) as f64;
            (q, quantile_sorted(&a, q), quantile_sorted(&b, q))
        })
        .collect())
}

struct ConvergenceTables {
    finite: PlotTable,
    limit: PlotTable,
    qq: PlotTable,
    ks: PlotTable,
}

impl ConvergenceTables {
    fn new(limit: &[f64]) -> Self {
        let mut lt = PlotTable::new("limit_draws", &["value"]);
        for &v in limit {
            lt.push(vec![v]);
        }
        ConvergenceTables {
            finite: PlotTable::new("finite_draws", &["n", "value"]),
            limit: lt,
            qq: PlotTable::new("qq", &["n", "level", "finite_quantile", "limit_quantile"]),
            ks: PlotTable::new("ks_vs_n", &["n", "ks"]),
        }
    }

    fn add(&mut self, n: usize, finite: &[f64], limit: &[f64], qq_points: usize) -> CliResult<KsRow> {
        let ks = ks_distance(finite, limit)?;
        for &v in finite {
            self.finite.push(vec![n as f64, v]);
        }
        for (q, a, b) in qq_pairs(finite, limit, qq_points)? {
            self.qq.push(vec![n as f64, q, a, b]);
        }
        self.ks.push(vec![n as f64, ks]);
        Ok(KsRow {
            n,
            ks,
            finite_mean: mean(finite),
            limit_mean: mean(limit),
        })
    }

    fn into_vec(self) -> Vec<PlotTable> {
        vec![self.finite, self.limit, self.qq, self.ks]
    }
}

/// Finite-sample versus limit law of the empirical IPRW distance on the grid.
pub fn iprw_convergence(cfg: &ExperimentConfig, regime: Regime) -> CliResult<(ConvergenceResult, Vec<PlotTable>)> {
    cfg.validate()?;
    let protocol = match regime {
        Regime::Null => Protocol::IprwNullConvergence,
        Regime::Alternative => Protocol::IprwAltConvergence,
    };
    let p = cfg.order(protocol);
    let seed = SeedStream::new(cfg.seed);
    let (space, r, s) = grid_instance(cfg, seed, regime)?;
    let ctx = IprwContext::new(&space, p, frame_set(cfg, space.dim(), seed)?)?;
    let limit = iprw_limit_law(&ctx, &r, &s, regime, cfg.limit_draws, seed.derive_named("limit"))?.draws;
    let mut tables = ConvergenceTables::new(&limit);
    let mut rows = Vec::new();
    for &n in &cfg.sample_sizes {
        let finite = iprw_finite_law(&ctx, &r, &s, regime, n, cfg.reps, seed.derive_named("finite").derive(n as u64))?;
        rows.push(tables.add(n, &finite, &limit, cfg.qq_points)?);
    }
    let result = ConvergenceResult {
        population_value: ctx.distance(&r, &s)?.value,
        support_size: space.len(),
        p,
        rows,
        modes: 1,
    };
    Ok((result, tables.into_vec()))
}

/// Finite-sample versus limit law of `sqrt(n/2) (PW(r_n, s_n) - PW(r, s))` on
/// the slab space with `r != s`.
pub fn prw_convergence(cfg: &ExperimentConfig) -> CliResult<(ConvergenceResult, Vec<PlotTable>)> {
    cfg.validate()?;
    let p = cfg.order(Protocol::PrwConvergence);
    let seed = SeedStream::new(cfg.seed);
    let space = GroundSpace::thin_slab(cfg.slab_levels)?;
    let r = dirichlet_flat(space.len(), seed.derive_named("r"))?;
    let s = dirichlet_flat(space.len(), seed.derive_named("s"))?;
    let k = cfg.k.min(space.dim());
    let opts = PrwOptions {
        k,
        restarts: cfg.restarts.max(1),
        seed: seed.derive_named("restarts").seed(),
        ..PrwOptions::default()
    };
    let population = prw_regularized(&r, &s, &space, p, cfg.lambda, &opts)?;
    let psi = argmax_set(&population, default_argmax_tolerance(&population));
    let limit = prw_limit_sampler(&r, &s, &space, p, cfg.lambda, &psi, 0.5, cfg.limit_draws, seed.derive_named("limit"))?.draws;
    let mut tables = ConvergenceTables::new(&limit);
    let mut rows = Vec::new();
    for &n in &cfg.sample_sizes {
        let stream = seed.derive_named("finite").derive(n as u64);
        let rate = alternative_rate(n, n);
        let finite = (0..cfg.reps)
            .into_par_iter()
            .map(|b| {
                let stream = stream.derive(b as u64);
                let mut rng = stream.rng();
                let rn = r.sample_empirical(n, &mut rng)?.floored(EMPTY_CELL_MASS)?;
                let sn = s.sample_empirical(n, &mut rng)?.floored(EMPTY_CELL_MASS)?;
                let rep_opts = PrwOptions {
                    restarts: cfg.replicate_restarts,
                    initial_frames: psi.frames.clone(),
                    seed: stream.derive_named("restarts").seed(),
                    ..opts.clone()
                };
                let v = prw_regularized(&rn, &sn, &space, p, cfg.lambda, &rep_opts)?.value;
                Ok(rate * (v - population.value))
            })
            .collect::<projwass::Result<Vec<f64>>>()?;
        rows.push(tables.add(n, &finite, &limit, cfg.qq_points)?);
    }
    let result = ConvergenceResult {
        population_value: population.value,
        support_size: space.len(),
        p,
        rows,
        modes: psi.len(),
    };
    Ok((result, tables.into_vec()))
}

fn rule_slug(rule: ReplacementRule) -> String {
    match rule {
        ReplacementRule::Full => "n".into(),
        ReplacementRule::FourFifths => "n4_5".into(),
        ReplacementRule::TwoThirds => "n2_3".into(),
        ReplacementRule::Half => "n1_2".into(),
        ReplacementRule::Explicit(l) => format!("l{l}"),
    }
}

/// Bootstrap laws for each replacement rule against the finite-sample and
/// limit laws of the empirical IPRW distance, repeated over `trials`.
pub fn bootstrap_compare(cfg: &ExperimentConfig) -> CliResult<(BootstrapCompareResult, Vec<PlotTable>)> {
    cfg.validate()?;
    if cfg.rules.is_empty() {
        return Err(CliError::input("bootstrap-compare needs at least one rule"));
    }
    if cfg.trials == 0 || cfg.bootstrap_replicates == 0 {
        return Err(CliError::input("trials and bootstrap_replicates must be positive"));
    }
    let p = cfg.order(Protocol::BootstrapCompare);
    let n = cfg.sample_sizes[0];
    let regime = cfg.regime;
    let root = SeedStream::new(cfg.seed);
    let mut finite_t = PlotTable::new("finite_draws", &["trial", "value"]);
    let mut limit_t = PlotTable::new("limit_draws", &["trial", "value"]);
    let mut boot_t: Vec<PlotTable> = cfg
        .rules
        .iter()
        .map(|&rule| PlotTable::new(format!("bootstrap_{}", rule_slug(rule)), &["trial", "ell", "value"]))
        .collect();
    let mut qq_t = PlotTable::new("qq", &["trial", "ell", "level", "bootstrap_quantile", "finite_quantile"]);
    let mut ks_t = PlotTable::new("ks", &["trial", "ell", "ks_finite", "ks_limit"]);
    let mut trials = Vec::new();
    for trial in 0..cfg.trials {
        let seed = root.derive_named("trial").derive(trial as u64);
        let (space, r, s) = grid_instance(cfg, seed, regime)?;
        let ctx = IprwContext::new(&space, p, frame_set(cfg, space.dim(), seed)?)?;
        let finite = iprw_finite_law(&ctx, &r, &s, regime, n, cfg.reps, seed.derive_named("finite"))?;
        let limit = iprw_limit_law(&ctx, &r, &s, regime, cfg.limit_draws, seed.derive_named("limit"))?.draws;
        let mut rng = seed.derive_named("observations").rng();
        let x = r.sample_indices(n, &mut rng);
        let y = s.sample_indices(n, &mut rng);
        let rate = match regime {
            Regime::Null => 0.5 / p,
            Regime::Alternative => 0.5,
        };
        let mut rules = Vec::new();
        for (i, &rule) in cfg.rules.iter().enumerate() {
            let bcfg = BootstrapConfig {
                rule,
                replicates: cfg.bootstrap_replicates,
                seed: seed.derive_named("bootstrap").derive(i as u64).seed(),
                centered: regime == Regime::Alternative,
            };
            let boot = rescaled_bootstrap_with_rate(|a, b| Ok(ctx.distance(a, b)?.value), &x, &y, space.len(), &bcfg, rate)?;
            let ell = two_sample_ell(n, n, rule)?;
            for &v in &boot {
                boot_t[i].push(vec![trial as f64, ell as f64, v]);
            }
            for (q, a, b) in qq_pairs(&boot, &finite, cfg.qq_points)? {
                qq_t.push(vec![trial as f64, ell as f64, q, a, b]);
            }
            let row = RuleKs {
                rule,
                ell,
                ks_finite: ks_distance(&boot, &finite)?,
                ks_limit: ks_distance(&boot, &limit)?,
            };
            ks_t.push(vec![trial as f64, ell as f64, row.ks_finite, row.ks_limit]);
            rules.push(row);
        }
        for &v in &finite {
            finite_t.push(vec![trial as f64, v]);
        }
        for &v in &limit {
            limit_t.push(vec![trial as f64, v]);
        }
        trials.push(BootstrapTrial {
            trial,
            ks_finite_limit: ks_distance(&finite, &limit)?,
            rules,
        });
    }
    let naive_worse = cfg
        .rules
        .iter()
        .enumerate()
        .map(|(i, &rule)| {
            let count = match cfg.rules.iter().position(|r| r.is_naive()) {
                Some(j) => trials.iter().filter(|t| t.rules[j].ks_finite > t.rules[i].ks_finite).count(),
                None => 0,
            };
            (rule, count)
        })
        .collect();
    let mut tables = vec![finite_t, limit_t];
    tables.extend(boot_t);
    tables.push(qq_t);
    tables.push(ks_t);
    Ok((
        BootstrapCompareResult {
            regime,
            n,
            trials,
            naive_worse,
        },
        tables,
    ))
}

/// Rejection rates of the sliced test under `r = s` and under independent
/// Dirichlet alternatives, one row per replacement rule.
pub fn test_level_power(cfg: &ExperimentConfig) -> CliResult<(LevelPowerResult, Vec<PlotTable>)> {
    cfg.validate()?;
    if cfg.rules.is_empty() || cfg.runs == 0 {
        return Err(CliError::input("test-level-power needs at least one rule and one run"));
    }
    let p = cfg.order(Protocol::TestLevelPower);
    let n = cfg.sample_sizes[0];
    let root = SeedStream::new(cfg.seed);
    let space = GroundSpace::grid(cfg.grid_side)?;
    let ctx = IprwContext::new(&space, p, frame_set(cfg, space.dim(), root)?)?;
    let mut pv = PlotTable::new("p_values", &["ell", "run", "null_p_value", "alternative_p_value"]);
    let mut rates = PlotTable::new("rejection_rates", &["ell", "null_rate", "alternative_rate"]);
    let mut rows = Vec::new();
    for &rule in &cfg.rules {
        let outcomes = (0..cfg.runs)
            .map(|run| {
                let seed = root.derive_named("run").derive(run as u64);
                let bcfg = BootstrapConfig {
                    rule,
                    replicates: cfg.bootstrap_replicates,
                    seed: seed.derive_named("bootstrap").seed(),
                    centered: false,
                };
                let mut out = [(false, 0.0); 2];
                for (slot, regime) in [Regime::Null, Regime::Alternative].into_iter().enumerate() {
                    let (_, r, s) = grid_instance(cfg, seed, regime)?;
                    let mut rng = seed.derive_named("observations").rng();
                    let x = r.sample_indices(n, &mut rng);
                    let y = s.sample_indices(n, &mut rng);
                    let rep = sliced_test_with_context(&x, &y, &ctx, cfg.alpha, &bcfg)?;
                    out[slot] = (rep.reject, rep.p_value);
                }
                Ok(out)
            })
            .collect::<CliResult<Vec<_>>>()?;
        let ell = two_sample_ell(n, n, rule)?;
        for (run, o) in outcomes.iter().enumerate() {
            pv.push(vec![ell as f64, run as f64, o[0].1, o[1].1]);
        }
        let rate = |slot: usize| outcomes.iter().filter(|o| o[slot].0).count() as f64 / cfg.runs as f64;
        let row = RejectionRow {
            rule,
            ell,
            null_rate: rate(0),
            alternative_rate: rate(1),
        };
        rates.push(vec![ell as f64, row.null_rate, row.alternative_rate]);
        rows.push(row);
    }
    Ok((
        LevelPowerResult {
            n,
            alpha: cfg.alpha,
            runs: cfg.runs,
            rows,
        },
        vec![rates, pv],
    ))
}

/// Runs a protocol and wraps its results in a report.
pub fn run_experiment(protocol: Protocol, cfg: &ExperimentConfig, command: Vec<String>) -> CliResult<ExperimentOutput> {
    let start = Instant::now();
    let (result, tables) = match protocol {
        Protocol::IprwNullConvergence => {
            let (r, t) = iprw_convergence(cfg, Regime::Null)?;
            (ExperimentResult::Convergence(r), t)
        }
        Protocol::IprwAltConvergence => {
            let (r, t) = iprw_convergence(cfg, Regime::Alternative)?;
            (ExperimentResult::Convergence(r), t)
        }
        Protocol::PrwConvergence => {
            let (r, t) = prw_convergence(cfg)?;
            (ExperimentResult::Convergence(r), t)
        }
        Protocol::BootstrapCompare => {
            let (r, t) = bootstrap_compare(cfg)?;
            (ExperimentResult::Bootstrap(r), t)
        }
        Protocol::TestLevelPower => {
            let (r, t) = test_level_power(cfg)?;
            (ExperimentResult::LevelPower(r), t)
        }
    };
    let mut warnings = Vec::new();
    if protocol == Protocol::TestLevelPower && cfg.rules.iter().any(|r| r.is_naive()) {
        warnings.push("the naive bootstrap is inconsistent under r = s; its rejection rate is not calibrated".into());
    }
    let config = serde_json::json!({ "protocol": protocol, "settings": cfg });
    let seeds = BTreeMap::from([("seed".to_string(), cfg.seed)]);
    let report = ReportDocument::new(command, &config, seeds, &result, start.elapsed().as_secs_f64(), warnings)?;
    Ok(ExperimentOutput { result, tables, report })
}
