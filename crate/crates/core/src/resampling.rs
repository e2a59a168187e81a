//! Rescaled (`l`-out-of-`n`) bootstrap, the sliced two-sample test, and
//! bootstrap confidence intervals for the regularized PRW distance.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iprw::{null_rate, IprwContext};
use crate::measures::{empirical_from_indices, GroundSpace, ProbVector};
use crate::numeric::quantile_sorted;
use crate::projections::ProjectionSet;
use crate::prw::{prw_regularized, PrwOptions};
use crate::rng::SeedStream;

/// Minimum replicate count accepted by the test and the interval.
pub const MIN_REPLICATES: usize = 20;

/// Mass given to empty histogram cells before a PRW ascent.
pub const EMPTY_CELL_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementRule {
    /// `l = n`, the naive bootstrap.
    Full,
    /// `l = floor(n^{4/5})`
    FourFifths,
    /// `l = floor(n^{2/3})`
    TwoThirds,
    /// `l = floor(n^{1/2})`
    Half,
    Explicit(usize),
}

impl ReplacementRule {
    pub const POWERS: [ReplacementRule; 4] = [Self::Full, Self::FourFifths, Self::TwoThirds, Self::Half];

    /// `(a, b)` for the rational exponent `a / b`.
    fn exponent(self) -> Option<(u32, u32)> {
        match self {
            Self::Full => Some((1, 1)),
            Self::FourFifths => Some((4, 5)),
            Self::TwoThirds => Some((2, 3)),
            Self::Half => Some((1, 2)),
            Self::Explicit(_) => None,
        }
    }

    pub fn is_naive(self) -> bool {
        matches!(self, Self::Full)
    }
}

impl fmt::Display for ReplacementRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Full => write!(f, "n"),
            Self::FourFifths => write!(f, "n^4/5"),
            Self::TwoThirds => write!(f, "n^2/3"),
            Self::Half => write!(f, "n^1/2"),
            Self::Explicit(l) => write!(f, "{l}"),
        }
    }
}

impl FromStr for ReplacementRule {
    type Err = Error;

    /// Accepts `n`, `4/5`, `n^4/5`, `2/3`, `n^2/3`, `1/2`, `n^1/2`, `sqrt`, or a
    /// positive integer for an explicit `l`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let t = t.strip_prefix("n^").unwrap_or(&t);
        match t {
            "n" | "1" | "full" | "naive" => Ok(Self::Full),
            "4/5" | "0.8" => Ok(Self::FourFifths),
            "2/3" => Ok(Self::TwoThirds),
            "1/2" | "0.5" | "sqrt" => Ok(Self::Half),
            other => match other.parse::<usize>() {
                Ok(l) if l > 0 => Ok(Self::Explicit(l)),
                _ => Err(Error::input(format!("unknown replacement rule '{s}'"))),
            },
        }
    }
}

/// `l = floor(n^{a/b})` computed exactly (largest `l` with `l^b <= n^a`), at least 1.
pub fn replacement_schedule(n: usize, rule: ReplacementRule) -> Result<usize> {
    if n == 0 {
        return Err(Error::input("sample size must be at least 1"));
    }
    let Some((a, b)) = rule.exponent() else {
        let ReplacementRule::Explicit(l) = rule else { unreachable!() };
        if l == 0 || l > n {
            return Err(Error::input(format!("explicit l = {l} outside 1..={n}")));
        }
        return Ok(l);
    };
    let target = (n as u128).checked_pow(a).ok_or_else(|| Error::input("sample size too large"))?;
    let fits = |l: u128| l.checked_pow(b).is_some_and(|v| v <= target);
    let mut l = ((n as f64).powf(a as f64 / b as f64).floor() as u128).max(1);
    while !fits(l) && l > 1 {
        l -= 1;
    }
    while fits(l + 1) {
        l += 1;
    }
    Ok(l as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub rule: ReplacementRule,
    pub replicates: usize,
    pub seed: u64,
    /// Center replicates at the plug-in estimate.
    pub centered: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            rule: ReplacementRule::Half,
            replicates: 500,
            seed: 0,
            centered: false,
        }
    }
}

/// Resampling size for two samples: the schedule applied to the smaller one.
pub fn two_sample_ell(n: usize, m: usize, rule: ReplacementRule) -> Result<usize> {
    replacement_schedule(n.min(m), rule)
}

fn check_samples(x: &[usize], y: &[usize], atoms: usize) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::input("both samples must be nonempty"));
    }
    if let Some(bad) = x.iter().chain(y).find(|&&i| i >= atoms) {
        return Err(Error::input(format!("sample index {bad} outside a support of size {atoms}")));
    }
    Ok(())
}

/// `B` replicates `(l/2)^rate * (stat(r*_l, s*_l) - c)` where `c` is the plug-in
/// value when `config.centered` and zero otherwise. Replicate `b` uses its own
/// derived stream, so results do not depend on scheduling.
pub fn rescaled_bootstrap_with_rate<F>(
    stat: F,
    samples_x: &[usize],
    samples_y: &[usize],
    atoms: usize,
    config: &BootstrapConfig,
    rate: f64,
) -> Result<Vec<f64>>
where
    F: Fn(&ProbVector, &ProbVector) -> Result<f64> + Sync,
{
    if config.replicates == 0 {
        return Ok(Vec::new());
    }
    check_samples(samples_x, samples_y, atoms)?;
    let ell = two_sample_ell(samples_x.len(), samples_y.len(), config.rule)?;
    let center = if config.centered {
        let r = empirical_from_indices(samples_x, atoms)?;
        let s = empirical_from_indices(samples_y, atoms)?;
        stat(&r, &s)?
    } else {
        0.0
    };
    let scale = (ell as f64 / 2.0).powf(rate);
    let seed = SeedStream::new(config.seed);
    (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed.derive(b as u64).rng();
            let xs: Vec<usize> = (0..ell).map(|_| samples_x[rand::Rng::random_range(&mut rng, 0..samples_x.len())]).collect();
            let ys: Vec<usize> = (0..ell).map(|_| samples_y[rand::Rng::random_range(&mut rng, 0..samples_y.len())]).collect();
            let r = empirical_from_indices(&xs, atoms)?;
            let s = empirical_from_indices(&ys, atoms)?;
            Ok(scale * (stat(&r, &s)? - center))
        })
        .collect()
}

/// [`rescaled_bootstrap_with_rate`] with the `sqrt(l/2)` rate.
pub fn rescaled_bootstrap<F>(
    stat: F,
    samples_x: &[usize],
    samples_y: &[usize],
    space: &GroundSpace,
    config: &BootstrapConfig,
) -> Result<Vec<f64>>
where
    F: Fn(&ProbVector, &ProbVector) -> Result<f64> + Sync,
{
    rescaled_bootstrap_with_rate(stat, samples_x, samples_y, space.len(), config, 0.5)
}

/// Sorted copy with NaNs rejected.
pub fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Internal("NaN among bootstrap replicates".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub ell: usize,
    pub replicates: usize,
    pub frames: usize,
    pub seed: u64,
    pub rule: ReplacementRule,
    pub warnings: Vec<String>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_replicates(b: usize) -> Result<()> {
    if b < MIN_REPLICATES {
        return Err(Error::input(format!("at least {MIN_REPLICATES} bootstrap replicates required, got {b}")));
    }
    Ok(())
}

fn naive_warning(rule: ReplacementRule) -> Vec<String> {
    if rule.is_naive() {
        vec!["the naive n-out-of-n bootstrap is inconsistent for this statistic under r = s; \
              critical values and intervals may be miscalibrated"
            .to_string()]
    } else {
        Vec::new()
    }
}

/// Two-sample test of `r = s` with the sliced statistic
/// `(nm/(n+m))^{1/(2p)} IW_p(r_n, s_m)` against the uncentered replicates
/// `(l/2)^{1/(2p)} IW_p(r*_l, s*_l)`. For `p = 1` both rates are square roots.
pub fn sliced_two_sample_test(
    samples_x: &[usize],
    samples_y: &[usize],
    space: &GroundSpace,
    p: f64,
    proj: &ProjectionSet,
    alpha: f64,
    config: &BootstrapConfig,
) -> Result<TestReport> {
    let ctx = IprwContext::new(space, p, std::sync::Arc::new(proj.clone()))?;
    sliced_test_with_context(samples_x, samples_y, &ctx, alpha, config)
}

/// [`sliced_two_sample_test`] reusing precomputed frame data.
pub fn sliced_test_with_context(
    samples_x: &[usize],
    samples_y: &[usize],
    ctx: &IprwContext,
    alpha: f64,
    config: &BootstrapConfig,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    check_replicates(config.replicates)?;
    let atoms = ctx.support_len();
    check_samples(samples_x, samples_y, atoms)?;
    let p = ctx.p();
    let (n, m) = (samples_x.len(), samples_y.len());
    let r = empirical_from_indices(samples_x, atoms)?;
    let s = empirical_from_indices(samples_y, atoms)?;
    let statistic = null_rate(n, m, p) * ctx.distance(&r, &s)?.value;
    let uncentered = BootstrapConfig {
        centered: false,
        ..config.clone()
    };
    let reps = rescaled_bootstrap_with_rate(
        |a, b| Ok(ctx.distance(a, b)?.value),
        samples_x,
        samples_y,
        atoms,
        &uncentered,
        0.5 / p,
    )?;
    let sorted_reps = sorted(&reps)?;
    let critical_value = quantile_sorted(&sorted_reps, 1.0 - alpha);
    let exceed = reps.iter().filter(|&&v| v >= statistic).count();
    let p_value = (1 + exceed) as f64 / (1 + reps.len()) as f64;
    let mut warnings = naive_warning(config.rule);
    if config.centered {
        warnings.push("the test uses uncentered replicates; the centered flag was ignored".into());
    }
    Ok(TestReport {
        statistic,
        critical_value,
        p_value,
        reject: statistic > critical_value,
        alpha,
        ell: two_sample_ell(n, m, config.rule)?,
        replicates: reps.len(),
        frames: ctx.projection_set().len(),
        seed: config.seed,
        rule: config.rule,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub point_estimate: f64,
    pub ell: usize,
    pub replicates: usize,
    pub method: String,
    pub warnings: Vec<String>,
}

/// Which replicates define the interval quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    /// Quantiles of `sqrt(l/2) (PW* - PW_hat)`.
    Centered,
    /// Quantiles of the raw replicates `PW*`, plugged into the same formula.
    Literal,
}

/// `[PW_hat - sqrt((n+m)/(nm)) q_{1-a/2}, PW_hat - sqrt((n+m)/(nm)) q_{a/2}]`.
#[allow(clippy::too_many_arguments)]
pub fn prw_confidence_interval(
    samples_x: &[usize],
    samples_y: &[usize],
    space: &GroundSpace,
    p: f64,
    lambda: f64,
    alpha: f64,
    config: &BootstrapConfig,
    prw_opts: &PrwOptions,
) -> Result<ConfidenceInterval> {
    prw_confidence_interval_with(samples_x, samples_y, space, p, lambda, alpha, config, prw_opts, IntervalMethod::Centered)
}

#[allow(clippy::too_many_arguments)]
pub fn prw_confidence_interval_with(
    samples_x: &[usize],
    samples_y: &[usize],
    space: &GroundSpace,
    p: f64,
    lambda: f64,
    alpha: f64,
    config: &BootstrapConfig,
    prw_opts: &PrwOptions,
    method: IntervalMethod,
) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    check_replicates(config.replicates)?;
    let atoms = space.len();
    check_samples(samples_x, samples_y, atoms)?;
    let (n, m) = (samples_x.len(), samples_y.len());
    let r = empirical_from_indices(samples_x, atoms)?;
    let s = empirical_from_indices(samples_y, atoms)?;
    let point = prw_regularized(&interior(&r)?, &interior(&s)?, space, p, lambda, prw_opts)?;
    // Replicate ascents start from the plug-in maximizer as well as at random.
    let rep_opts = PrwOptions {
        initial_frames: vec![point.best_frame.clone()],
        ..prw_opts.clone()
    };
    let stat = |a: &ProbVector, b: &ProbVector| {
        let (a, b) = (interior(a)?, interior(b)?);
        Ok(prw_regularized(&a, &b, space, p, lambda, &rep_opts)?.value)
    };
    let raw_cfg = BootstrapConfig {
        centered: false,
        ..config.clone()
    };
    let raw = rescaled_bootstrap_with_rate(stat, samples_x, samples_y, atoms, &raw_cfg, 0.0)?;
    let ell = two_sample_ell(n, m, config.rule)?;
    let q: Vec<f64> = match method {
        IntervalMethod::Centered => {
            let scale = (ell as f64 / 2.0).sqrt();
            raw.iter().map(|v| scale * (v - point.value)).collect()
        }
        IntervalMethod::Literal => raw,
    };
    let q = sorted(&q)?;
    let factor = ((n + m) as f64 / (n as f64 * m as f64)).sqrt();
    let lo_q = quantile_sorted(&q, alpha / 2.0);
    let hi_q = quantile_sorted(&q, 1.0 - alpha / 2.0);
    let mut warnings = naive_warning(config.rule);
    if !r.is_strictly_positive() || !s.is_strictly_positive() {
        warnings.push("empty cells in the empirical histograms were given a tiny mass".into());
    }
    Ok(ConfidenceInterval {
        lower: point.value - factor * hi_q,
        upper: point.value - factor * lo_q,
        level: 1.0 - alpha,
        point_estimate: point.value,
        ell,
        replicates: q.len(),
        method: match method {
            IntervalMethod::Centered => "centered rescaled bootstrap".into(),
            IntervalMethod::Literal => "uncentered replicate quantiles".into(),
        },
        warnings,
    })
}

/// Empirical histograms may miss atoms; the ascent needs interior plans, so
/// empty cells get mass [`EMPTY_CELL_MASS`] before renormalizing.
fn interior(r: &ProbVector) -> Result<ProbVector> {
    r.floored(EMPTY_CELL_MASS)
}
