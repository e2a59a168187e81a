//! The regularized projection robust distance
//! `PW_{p,lambda}(r, s) = max_E <c(E), pi_lambda(E)>^{1/p}` over `S_{d,k}`,
//! found by multi-start Riemannian ascent, and its limit law.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropic_transport::{reduced_gram, reduced_marginals, sinkhorn_with_cost, RegularizedPlan, SinkhornOptions};
use crate::error::{Error, Result};
use crate::exact_transport::{dot, CostVector};
use crate::iprw::{LimitSampleSet, Regime};
use crate::measures::{multinomial_covariance, GaussianSampler, GroundSpace, ProbVector};
use crate::projections::{aligned_distance, qr_retract, sample_uniform_frame, tangent_projection, StiefelFrame};
use crate::rng::SeedStream;

const ARMIJO: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_HALVINGS: usize = 60;
/// Accepted steps must raise the objective by more than this many units of
/// `max(1, value)`; smaller gains are indistinguishable from Sinkhorn roundoff.
const ROUNDOFF_GAIN: f64 = 64.0 * f64::EPSILON;
/// Frames closer than this after alignment count as the same mode.
pub const DEDUP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrwOptions {
    /// Projection dimension.
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub step_init: f64,
    /// Stop once the Riemannian gradient norm is below `tol * max(1, value)`.
    pub tol: f64,
    pub seed: u64,
    pub sinkhorn: SinkhornOptions,
    /// Extra starting frames tried before the random restarts.
    #[serde(skip)]
    pub initial_frames: Vec<StiefelFrame>,
}

impl Default for PrwOptions {
    fn default() -> Self {
        PrwOptions {
            k: 1,
            restarts: 10,
            max_iter: 500,
            step_init: 0.1,
            tol: 1e-8,
            seed: 0,
            sinkhorn: SinkhornOptions::with_tol(1e-12),
            initial_frames: Vec::new(),
        }
    }
}

/// Outcome of one ascent run.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub frame: StiefelFrame,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting at the initial frame.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrwSolution {
    pub value: f64,
    pub best_frame: StiefelFrame,
    pub candidates: Vec<Candidate>,
    pub iterations: Vec<usize>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxSet {
    pub frames: Vec<StiefelFrame>,
    pub values: Vec<f64>,
    pub tolerance: f64,
}

impl ArgmaxSet {
    pub fn singleton(frame: StiefelFrame, value: f64) -> Self {
        ArgmaxSet {
            frames: vec![frame],
            values: vec![value],
            tolerance: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaVector {
    pub entries: Vec<f64>,
}

fn check_even(p: f64) -> Result<()> {
    if !(p >= 2.0 && p.fract() == 0.0 && (p as u64) % 2 == 0) {
        return Err(Error::input(format!("regularized PRW needs an even order p, got {p}")));
    }
    Ok(())
}

/// The objective `E -> <c(E), pi_lambda(E)>^{1/p}` on one problem instance.
struct Objective<'a> {
    coords: Vec<f64>,
    n: usize,
    d: usize,
    r: &'a [f64],
    s: &'a [f64],
    p: f64,
    lambda: f64,
    sinkhorn: &'a SinkhornOptions,
}

struct Evaluation {
    value: f64,
    cost: CostVector,
    plan: RegularizedPlan,
}

impl<'a> Objective<'a> {
    fn projected_cost(&self, e: &StiefelFrame) -> CostVector {
        let k = e.k();
        let mut y = Vec::with_capacity(self.n * k);
        for i in 0..self.n {
            y.extend(e.project(&self.coords[i * self.d..(i + 1) * self.d]));
        }
        CostVector::from_coords(&y, k, self.p)
    }

    fn evaluate(&self, e: &StiefelFrame, warm: Option<&[f64]>) -> Result<Evaluation> {
        let cost = self.projected_cost(e);
        let opts = SinkhornOptions {
            warm_start: warm.map(<[f64]>::to_vec),
            ..self.sinkhorn.clone()
        };
        let plan = sinkhorn_with_cost(self.r, self.s, &cost, self.lambda, &opts)?;
        Ok(Evaluation {
            value: plan.transport_cost.max(0.0).powf(1.0 / self.p),
            cost,
            plan,
        })
    }

    /// Euclidean gradient of the objective in `E`, including the response of
    /// the regularized plan to the cost:
    /// `d<c, pi>/dc = pi - (q - J A_* q) / lambda` with `q = pi * c`.
    fn gradient(&self, e: &StiefelFrame, ev: &Evaluation) -> Result<DMatrix<f64>> {
        let n = self.n;
        let d = self.d;
        let pi = &ev.plan.entries;
        let c = ev.cost.entries();
        let total = ev.plan.transport_cost;
        if !(total > 0.0) {
            return Ok(DMatrix::zeros(d, e.k()));
        }
        let q: Vec<f64> = pi.iter().zip(c).map(|(a, b)| a * b).collect();
        let chol = reduced_gram(&ev.plan)?;
        let y = chol.solve(&nalgebra::DVector::from_vec(reduced_marginals(&q, n)));
        let mut v = DMatrix::<f64>::zeros(d, d);
        let mut z = vec![0.0; d];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut w = 0.0;
                for (a, b) in [(i, j), (j, i)] {
                    let k = a * n + b;
                    let jaq = pi[k] * (y[a] + if b < n - 1 { y[n + b] } else { 0.0 });
                    w += pi[k] - (q[k] - jaq) / self.lambda;
                }
                if self.p != 2.0 {
                    // ||E^T z||^{p - 2} = c^{(p - 2) / p}
                    w *= c[i * n + j].powf((self.p - 2.0) / self.p);
                }
                for (t, zt) in z.iter_mut().enumerate() {
                    *zt = self.coords[i * d + t] - self.coords[j * d + t];
                }
                for a in 0..d {
                    for b in 0..d {
                        v[(a, b)] += w * z[a] * z[b];
                    }
                }
            }
        }
        let scale = total.powf(1.0 / self.p - 1.0);
        Ok(v * e.matrix() * scale)
    }

    fn ascend(&self, start: StiefelFrame, opts: &PrwOptions) -> Result<Candidate> {
        let mut e = start;
        let mut ev = self.evaluate(&e, None)?;
        let initial_value = ev.value;
        let mut trace = vec![ev.value];
        let mut step = opts.step_init;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let grad = self.gradient(&e, &ev)?;
            let xi = tangent_projection(&e, &grad);
            let gn2 = xi.norm_squared();
            let scale = ev.value.max(1.0);
            if gn2.sqrt() <= opts.tol * scale {
                converged = true;
                break;
            }
            iterations += 1;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                match qr_retract(&e, &xi, step) {
                    Ok(cand) => {
                        let next = self.evaluate(&cand, Some(&ev.plan.col_potential))?;
                        let gain = next.value - ev.value;
                        if gain >= ARMIJO * step * gn2 && gain > ROUNDOFF_GAIN * scale {
                            accepted = Some((cand, next));
                            break;
                        }
                    }
                    Err(Error::Retraction(_)) => {}
                    Err(other) => return Err(other),
                }
                step *= BACKTRACK;
            }
            match accepted {
                Some((cand, next)) => {
                    e = cand;
                    ev = next;
                    trace.push(ev.value);
                    step = (step * 2.0).min(1e6);
                }
                None => {
                    // Remaining ascent is below evaluation roundoff.
                    converged = gn2.sqrt() <= opts.tol.sqrt() * scale;
                    break;
                }
            }
        }
        Ok(Candidate {
            frame: e,
            value: ev.value,
            initial_value,
            iterations,
            converged,
            trace,
        })
    }
}

fn check_instance(r: &ProbVector, s: &ProbVector, space: &GroundSpace, p: f64, lambda: f64, k: usize) -> Result<()> {
    check_even(p)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::input(format!("lambda must be positive, got {lambda}")));
    }
    if k == 0 || k > space.dim() {
        return Err(Error::input(format!("projection dimension {k} outside 1..={}", space.dim())));
    }
    if r.len() != space.len() || s.len() != space.len() {
        return Err(Error::input("distribution length does not match support"));
    }
    Ok(())
}

fn objective<'a>(
    r: &'a ProbVector,
    s: &'a ProbVector,
    space: &GroundSpace,
    p: f64,
    lambda: f64,
    sinkhorn: &'a SinkhornOptions,
) -> Objective<'a> {
    Objective {
        coords: space.points().flatten().copied().collect(),
        n: space.len(),
        d: space.dim(),
        r: r.weights(),
        s: s.weights(),
        p,
        lambda,
        sinkhorn,
    }
}

/// `<c(E), pi_lambda(E)>^{1/p}` at a single frame.
pub fn prw_objective(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    lambda: f64,
    frame: &StiefelFrame,
    sinkhorn: &SinkhornOptions,
) -> Result<f64> {
    check_instance(r, s, space, p, lambda, frame.k())?;
    if frame.d() != space.dim() {
        return Err(Error::input("frame dimension does not match support"));
    }
    Ok(objective(r, s, space, p, lambda, sinkhorn).evaluate(frame, None)?.value)
}

/// Euclidean gradient of [`prw_objective`] with respect to the frame matrix.
pub fn prw_objective_gradient(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    lambda: f64,
    frame: &StiefelFrame,
    sinkhorn: &SinkhornOptions,
) -> Result<DMatrix<f64>> {
    check_instance(r, s, space, p, lambda, frame.k())?;
    require_interior(r, s)?;
    let obj = objective(r, s, space, p, lambda, sinkhorn);
    let ev = obj.evaluate(frame, None)?;
    obj.gradient(frame, &ev)
}

fn require_interior(r: &ProbVector, s: &ProbVector) -> Result<()> {
    if !(r.is_strictly_positive() && s.is_strictly_positive()) {
        return Err(Error::input("regularized PRW ascent needs strictly positive r and s"));
    }
    Ok(())
}

pub fn prw_regularized(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    lambda: f64,
    opts: &PrwOptions,
) -> Result<PrwSolution> {
    check_instance(r, s, space, p, lambda, opts.k)?;
    require_interior(r, s)?;
    if opts.restarts == 0 && opts.initial_frames.is_empty() {
        return Err(Error::input("at least one restart required"));
    }
    if opts.initial_frames.iter().any(|f| f.d() != space.dim() || f.k() != opts.k) {
        return Err(Error::input("initial frame shape does not match"));
    }
    let obj = objective(r, s, space, p, lambda, &opts.sinkhorn);
    let seed = SeedStream::new(opts.seed);
    let mut starts = opts.initial_frames.clone();
    for t in 0..opts.restarts {
        starts.push(sample_uniform_frame(space.dim(), opts.k, seed.derive(t as u64))?);
    }
    let candidates = starts
        .into_par_iter()
        .map(|e| obj.ascend(e, opts))
        .collect::<Result<Vec<_>>>()?;
    if !candidates.iter().any(|c| c.converged) {
        let worst = candidates.iter().map(|c| c.iterations).max().unwrap_or(0);
        return Err(Error::Convergence {
            solver: "prw ascent",
            iterations: worst,
            residual: candidates.iter().map(|c| c.value).fold(f64::NAN, f64::max),
        });
    }
    let best = candidates
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.value.total_cmp(&b.1.value).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    Ok(PrwSolution {
        value: candidates[best].value,
        best_frame: candidates[best].frame.clone(),
        iterations: candidates.iter().map(|c| c.iterations).collect(),
        converged: true,
        candidates,
    })
}

/// Default argmax tolerance `1e-6 * value`.
pub fn default_argmax_tolerance(solution: &PrwSolution) -> f64 {
    1e-6 * solution.value.abs()
}

/// Distinct (up to right rotation) candidates within `eps` of the maximum,
/// best first.
pub fn argmax_set(solution: &PrwSolution, eps: f64) -> ArgmaxSet {
    let mut order: Vec<&Candidate> = solution.candidates.iter().collect();
    order.sort_by(|a, b| b.value.total_cmp(&a.value));
    let mut frames: Vec<StiefelFrame> = Vec::new();
    let mut values = Vec::new();
    for c in order {
        if !(c.value >= solution.value - eps) {
            continue;
        }
        if frames.iter().any(|f| aligned_distance(f, &c.frame) <= DEDUP_TOL) {
            continue;
        }
        frames.push(c.frame.clone());
        values.push(c.value);
    }
    ArgmaxSet {
        frames,
        values,
        tolerance: eps,
    }
}

/// `gamma = (1/p) <c, pi>^{1/p - 1} c`, the gradient of `pi -> <c, pi>^{1/p}`.
pub fn gamma_vector(plan: &RegularizedPlan, cost: &CostVector, p: f64) -> Result<GammaVector> {
    if plan.entries.len() != cost.entries().len() {
        return Err(Error::input("plan and cost sizes differ"));
    }
    let total = dot(&plan.entries, cost.entries());
    if !(total > 0.0) {
        return Err(Error::Singularity("<c, pi> = 0: the p-th root is not differentiable".into()));
    }
    let kappa = if p == 1.0 { 1.0 } else { total.powf(1.0 / p - 1.0) / p };
    Ok(GammaVector {
        entries: cost.entries().iter().map(|c| kappa * c).collect(),
    })
}

/// `w_E = J^T gamma = (A_* D A_*^T)^{-1} A_* (pi * gamma)`, length `2N - 1`.
fn limit_weights(plan: &RegularizedPlan, gamma: &GammaVector) -> Result<Vec<f64>> {
    let n = plan.n();
    let chol = reduced_gram(plan)?;
    let pg: Vec<f64> = plan.entries.iter().zip(&gamma.entries).map(|(a, b)| a * b).collect();
    let y = chol.solve(&nalgebra::DVector::from_vec(reduced_marginals(&pg, n)));
    Ok(y.iter().copied().collect())
}

/// Draws of `max_{E in psi} <w_E, (sqrt(delta) G, sqrt(1 - delta) H_*)>` with
/// independent `G ~ N(0, Sigma(r))`, `H ~ N(0, Sigma(s))`.
#[allow(clippy::too_many_arguments)]
pub fn prw_limit_sampler(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    lambda: f64,
    psi: &ArgmaxSet,
    delta: f64,
    draws: usize,
    seed: SeedStream,
) -> Result<LimitSampleSet> {
    if psi.is_empty() {
        return Err(Error::input("argmax set is empty"));
    }
    check_instance(r, s, space, p, lambda, psi.frames[0].k())?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!("delta must lie in (0, 1), got {delta}")));
    }
    let n = space.len();
    let out = |values: Vec<f64>| LimitSampleSet {
        draws: values,
        regime: Regime::Alternative,
        delta: Some(delta),
        scaling_exponent: 0.5,
        modes: psi.len(),
    };
    let sigma_r = multinomial_covariance(r);
    let sigma_s = multinomial_covariance(s);
    if sigma_r.is_zero() && sigma_s.is_zero() {
        return Ok(out(vec![0.0; draws]));
    }
    let sinkhorn = SinkhornOptions::with_tol(1e-13);
    let obj = objective(r, s, space, p, lambda, &sinkhorn);
    let weights = psi
        .frames
        .iter()
        .enumerate()
        .map(|(t, e)| {
            let ev = obj.evaluate(e, None).map_err(|err| err.in_frame(t))?;
            let gamma = gamma_vector(&ev.plan, &ev.cost, p).map_err(|err| err.in_frame(t))?;
            limit_weights(&ev.plan, &gamma).map_err(|err| err.in_frame(t))
        })
        .collect::<Result<Vec<_>>>()?;
    let gs = GaussianSampler::new(&sigma_r);
    let hs = GaussianSampler::new(&sigma_s);
    let (a, b) = (delta.sqrt(), (1.0 - delta).sqrt());
    let values = (0..draws)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed.derive(k as u64).rng();
            let g = gs.draw(&mut rng);
            let h = hs.draw(&mut rng);
            let x: Vec<f64> = g.iter().map(|v| a * v).chain(h[..n - 1].iter().map(|v| b * v)).collect();
            weights.iter().map(|w| dot(w, &x)).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(out(values))
}
