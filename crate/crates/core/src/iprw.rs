//! The integral projection robust distance
//! `IW_p(r, s) = (sum_t w_t W_p^p(r, s; X_{E_t}))^{1/p}` over a fixed frame set,
//! its directional derivative, and samplers for its two limit laws.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_transport::{
    check_order, face_max, monotone_coupling, null_dual_max_cost, null_line_sorted, transport_with_cost,
    wasserstein_1d_cost, CostVector,
};
use crate::measures::{multinomial_covariance, DirectionVector, GaussianSampler, GroundSpace, ProbVector};
use crate::numeric::pairwise_sum;
use crate::projections::{project_support, ProjectedSpace, ProjectionSet, MERGE_TOL};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Null,
    Alternative,
}

/// Draws from a limit law together with the regime and rate they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSampleSet {
    pub draws: Vec<f64>,
    pub regime: Regime,
    /// Limiting sample-size ratio `m / (n + m)`; unused by the null law.
    pub delta: Option<f64>,
    /// Exponent `a` of the finite-sample rate `(nm / (n + m))^a`.
    pub scaling_exponent: f64,
    /// Number of frames the law maximizes over (PRW); 1 otherwise.
    pub modes: usize,
}

#[derive(Debug, Clone)]
pub struct IprwEstimate {
    pub value: f64,
    pub p: f64,
    /// `W_p` on each projected support, in frame order.
    pub per_frame_values: Vec<f64>,
    pub projection_set: Arc<ProjectionSet>,
}

impl IprwEstimate {
    /// `IW_p^p`
    pub fn pth_power(&self) -> f64 {
        weighted_power_sum(&self.per_frame_values, self.projection_set.weights(), self.p)
    }

    /// Monte-Carlo standard error of `IW_p^p` from the per-frame spread,
    /// meaningful for equally weighted random frames.
    pub fn frame_standard_error(&self) -> f64 {
        let t = self.per_frame_values.len();
        if t < 2 {
            return 0.0;
        }
        let powers: Vec<f64> = self.per_frame_values.iter().map(|v| v.powf(self.p)).collect();
        (crate::numeric::variance(&powers) / t as f64).sqrt()
    }
}

fn weighted_power_sum(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let terms: Vec<f64> = values.iter().zip(weights).map(|(v, w)| w * v.powf(p)).collect();
    pairwise_sum(&terms)
}

/// `(nm / (n + m))^{1/(2p)}`, the rate of `IW_p` under `r = s`.
pub fn null_rate(n: usize, m: usize, p: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    (n * m / (n + m)).powf(0.5 / p)
}

/// `sqrt(nm / (n + m))`, the rate away from the null.
pub fn alternative_rate(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    (n * m / (n + m)).sqrt()
}

enum FrameGeometry {
    /// `k = 1`: merged projected points and their ascending order.
    Line { points: Vec<f64>, order: Vec<usize> },
    General { cost: CostVector },
}

struct FrameData {
    projected: ProjectedSpace,
    geometry: FrameGeometry,
}

impl FrameData {
    fn cost(&self, p: f64) -> CostVector {
        match &self.geometry {
            FrameGeometry::Line { points, .. } => CostVector::from_coords(points, 1, p),
            FrameGeometry::General { cost } => cost.clone(),
        }
    }

    /// `W_p^p` between merged weights.
    fn transport_cost(&self, r: &[f64], s: &[f64], p: f64) -> Result<f64> {
        match &self.geometry {
            FrameGeometry::Line { points, order } => Ok(wasserstein_1d_cost(r, s, points, order, p)),
            FrameGeometry::General { cost } => Ok(transport_with_cost(r, s, cost)?.cost()),
        }
    }

    /// An optimal plan between merged weights on the merged support.
    fn optimal_plan(&self, r: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let n = self.projected.len();
        match &self.geometry {
            FrameGeometry::Line { order, .. } => {
                let mut plan = vec![0.0; n * n];
                monotone_coupling(r, s, order, |i, j, m| plan[i * n + j] += m);
                Ok(plan)
            }
            FrameGeometry::General { cost } => Ok(transport_with_cost(r, s, cost)?.plan.entries),
        }
    }

    fn null_dual_max(&self, g: &[f64], p: f64) -> Result<f64> {
        match &self.geometry {
            FrameGeometry::Line { points, order } => Ok(null_line_sorted(points, order, p, g)),
            FrameGeometry::General { cost } => null_dual_max_cost(cost, g),
        }
    }
}

/// Projected supports and solver data for one `(space, p, frame set)`, reused
/// across every evaluation of an experiment.
pub struct IprwContext {
    n: usize,
    p: f64,
    set: Arc<ProjectionSet>,
    frames: Vec<FrameData>,
}

impl IprwContext {
    pub fn new(space: &GroundSpace, p: f64, set: Arc<ProjectionSet>) -> Result<Self> {
        check_order(p)?;
        if set.d() != space.dim() {
            return Err(Error::input(format!(
                "frames live in R^{} but the support is in R^{}",
                set.d(),
                space.dim()
            )));
        }
        let frames = set
            .frames()
            .par_iter()
            .map(|e| {
                let projected = project_support(space, e, MERGE_TOL)?;
                let geometry = if e.k() == 1 {
                    let points = projected.coords().to_vec();
                    let mut order: Vec<usize> = (0..points.len()).collect();
                    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
                    FrameGeometry::Line { points, order }
                } else {
                    FrameGeometry::General {
                        cost: CostVector::from_coords(projected.coords(), projected.dim(), p),
                    }
                };
                Ok(FrameData { projected, geometry })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(IprwContext {
            n: space.len(),
            p,
            set,
            frames,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn support_len(&self) -> usize {
        self.n
    }

    pub fn projection_set(&self) -> &Arc<ProjectionSet> {
        &self.set
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::input(format!(
                "vector of length {} on a support of size {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// `IW_p` from raw weight vectors (validated by the caller).
    pub fn distance_weights(&self, r: &[f64], s: &[f64]) -> Result<IprwEstimate> {
        self.check_len(r)?;
        self.check_len(s)?;
        let p = self.p;
        let per_frame = self
            .frames
            .par_iter()
            .enumerate()
            .map(|(t, f)| {
                let rm = f.projected.push_forward(r);
                let sm = f.projected.push_forward(s);
                f.transport_cost(&rm, &sm, p)
                    .map(|c| c.max(0.0).powf(1.0 / p))
                    .map_err(|e| e.in_frame(t))
            })
            .collect::<Result<Vec<_>>>()?;
        let value = weighted_power_sum(&per_frame, self.set.weights(), p).powf(1.0 / p);
        Ok(IprwEstimate {
            value,
            p,
            per_frame_values: per_frame,
            projection_set: Arc::clone(&self.set),
        })
    }

    pub fn distance(&self, r: &ProbVector, s: &ProbVector) -> Result<IprwEstimate> {
        self.distance_weights(r.weights(), s.weights())
    }

    /// Directional derivative of `IW_p^p` at `(r, s)` along `(h1, h2)`:
    /// `sum_t w_t max_{(u, v) optimal on X_{E_t}} <u, h1> + <v, h2>`.
    pub fn derivative(&self, r: &ProbVector, s: &ProbVector, h1: &DirectionVector, h2: &DirectionVector) -> Result<f64> {
        self.check_len(r.weights())?;
        self.check_len(s.weights())?;
        self.check_len(h1.entries())?;
        self.check_len(h2.entries())?;
        let p = self.p;
        let terms = self
            .frames
            .par_iter()
            .enumerate()
            .map(|(t, f)| {
                let proj = &f.projected;
                let (rm, sm) = (proj.push_forward(r.weights()), proj.push_forward(s.weights()));
                let (h1m, h2m) = (proj.push_forward(h1.entries()), proj.push_forward(h2.entries()));
                let plan = f.optimal_plan(&rm, &sm).map_err(|e| e.in_frame(t))?;
                face_max(&f.cost(p), &plan, &h1m, &h2m).map_err(|e| e.in_frame(t))
            })
            .collect::<Result<Vec<_>>>()?;
        let weighted: Vec<f64> = terms.iter().zip(self.set.weights()).map(|(v, w)| v * w).collect();
        Ok(pairwise_sum(&weighted))
    }

    /// Draws of `(sum_t w_t max_{u in Phi*(X_{E_t})} <G, u>)^{1/p}` with
    /// `G ~ N(0, Sigma(r))` shared across frames.
    pub fn null_limit(&self, r: &ProbVector, draws: usize, seed: SeedStream) -> Result<LimitSampleSet> {
        self.check_len(r.weights())?;
        if draws == 0 {
            return Err(Error::input("at least one draw required"));
        }
        let p = self.p;
        let sampler = GaussianSampler::new(&multinomial_covariance(r));
        let values = (0..draws)
            .into_par_iter()
            .map(|b| {
                let g = sampler.draw(&mut seed.derive(b as u64).rng());
                let mut terms = Vec::with_capacity(self.frames.len());
                for (t, (f, w)) in self.frames.iter().zip(self.set.weights()).enumerate() {
                    let gm = f.projected.push_forward(&g);
                    terms.push(w * f.null_dual_max(&gm, p).map_err(|e| e.in_frame(t))?);
                }
                Ok(pairwise_sum(&terms).max(0.0).powf(1.0 / p))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LimitSampleSet {
            draws: values,
            regime: Regime::Null,
            delta: None,
            scaling_exponent: 0.5 / p,
            modes: 1,
        })
    }

    /// Draws of `(1/p) IW_p^{1-p} sum_t w_t max_{Phi*} sqrt(delta) <G, u> + sqrt(1 - delta) <H, v>`.
    pub fn alternative_limit(
        &self,
        r: &ProbVector,
        s: &ProbVector,
        delta: f64,
        draws: usize,
        seed: SeedStream,
    ) -> Result<LimitSampleSet> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::input(format!("delta must lie in (0, 1), got {delta}")));
        }
        if draws == 0 {
            return Err(Error::input("at least one draw required"));
        }
        let p = self.p;
        let estimate = self.distance(r, s)?;
        if !(estimate.value > 0.0) {
            return Err(Error::Regime(
                "IW_p(r, s) = 0: the alternative law needs r != s; use the null sampler".into(),
            ));
        }
        let prefactor = if p == 1.0 { 1.0 } else { estimate.value.powf(1.0 - p) / p };
        let faces = self
            .frames
            .par_iter()
            .enumerate()
            .map(|(t, f)| {
                let (rm, sm) = (f.projected.push_forward(r.weights()), f.projected.push_forward(s.weights()));
                let plan = f.optimal_plan(&rm, &sm).map_err(|e| e.in_frame(t))?;
                Ok((f.cost(p), plan))
            })
            .collect::<Result<Vec<_>>>()?;
        let gs = GaussianSampler::new(&multinomial_covariance(r));
        let hs = GaussianSampler::new(&multinomial_covariance(s));
        let (a, b) = (delta.sqrt(), (1.0 - delta).sqrt());
        let values = (0..draws)
            .into_par_iter()
            .map(|k| {
                let mut rng = seed.derive(k as u64).rng();
                let g: Vec<f64> = gs.draw(&mut rng).iter().map(|x| a * x).collect();
                let h: Vec<f64> = hs.draw(&mut rng).iter().map(|x| b * x).collect();
                let mut terms = Vec::with_capacity(faces.len());
                for (t, ((f, (cost, plan)), w)) in self.frames.iter().zip(&faces).zip(self.set.weights()).enumerate() {
                    let (gm, hm) = (f.projected.push_forward(&g), f.projected.push_forward(&h));
                    terms.push(w * face_max(cost, plan, &gm, &hm).map_err(|e| e.in_frame(t))?);
                }
                Ok(prefactor * pairwise_sum(&terms))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LimitSampleSet {
            draws: values,
            regime: Regime::Alternative,
            delta: Some(delta),
            scaling_exponent: 0.5,
            modes: 1,
        })
    }
}

fn context(space: &GroundSpace, p: f64, proj: &ProjectionSet) -> Result<IprwContext> {
    IprwContext::new(space, p, Arc::new(proj.clone()))
}

pub fn iprw_distance(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    proj: &ProjectionSet,
) -> Result<IprwEstimate> {
    context(space, p, proj)?.distance(r, s)
}

/// Directional derivative of `IW_p^p`; see [`iprw_root_derivative`] for `IW_p`.
pub fn iprw_derivative(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    proj: &ProjectionSet,
    h1: &DirectionVector,
    h2: &DirectionVector,
) -> Result<f64> {
    context(space, p, proj)?.derivative(r, s, h1, h2)
}

/// Directional derivative of `IW_p` itself, by the chain rule
/// `(1/p) IW_p^{1-p}` applied to the `IW_p^p` derivative. Needs `IW_p > 0`.
pub fn iprw_root_derivative(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    proj: &ProjectionSet,
    h1: &DirectionVector,
    h2: &DirectionVector,
) -> Result<f64> {
    let ctx = context(space, p, proj)?;
    let value = ctx.distance(r, s)?.value;
    if !(value > 0.0) {
        return Err(Error::Singularity("IW_p = 0: its p-th root is not differentiable".into()));
    }
    Ok(ctx.derivative(r, s, h1, h2)? * value.powf(1.0 - p) / p)
}

pub fn iprw_null_limit_sampler(
    r: &ProbVector,
    space: &GroundSpace,
    p: f64,
    proj: &ProjectionSet,
    draws: usize,
    seed: SeedStream,
) -> Result<LimitSampleSet> {
    context(space, p, proj)?.null_limit(r, draws, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn iprw_alt_limit_sampler(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    proj: &ProjectionSet,
    delta: f64,
    draws: usize,
    seed: SeedStream,
) -> Result<LimitSampleSet> {
    context(space, p, proj)?.alternative_limit(r, s, delta, draws, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_transport::wasserstein_lp;
    use crate::measures::dirichlet_flat;
    use crate::projections::{sample_uniform_frame, StiefelFrame};
    use approx::assert_abs_diff_eq;

    fn pv(w: &[f64]) -> ProbVector {
        ProbVector::new(w.to_vec()).unwrap()
    }

    #[test]
    fn equal_inputs_give_zero() {
        let space = GroundSpace::grid(3).unwrap();
        let r = dirichlet_flat(9, SeedStream::new(1)).unwrap();
        let set = ProjectionSet::uniform(2, 1, 32, SeedStream::new(2)).unwrap();
        let est = iprw_distance(&r, &r, &space, 1.0, &set).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn full_frame_matches_exact_transport() {
        let space = GroundSpace::thin_slab(2).unwrap();
        let r = dirichlet_flat(8, SeedStream::new(3)).unwrap();
        let s = dirichlet_flat(8, SeedStream::new(4)).unwrap();
        for p in [1.0, 2.0] {
            let e = sample_uniform_frame(3, 3, SeedStream::new(5)).unwrap();
            let est = iprw_distance(&r, &s, &space, p, &ProjectionSet::single(e)).unwrap();
            let exact = wasserstein_lp(&r, &s, &space, p).unwrap().distance;
            assert_abs_diff_eq!(est.value, exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn aggregation_is_consistent() {
        let space = GroundSpace::grid(3).unwrap();
        let r = dirichlet_flat(9, SeedStream::new(6)).unwrap();
        let s = dirichlet_flat(9, SeedStream::new(7)).unwrap();
        let set = ProjectionSet::uniform(2, 1, 50, SeedStream::new(8)).unwrap();
        let est = iprw_distance(&r, &s, &space, 2.0, &set).unwrap();
        assert_abs_diff_eq!(est.value, est.pth_power().powf(0.5), epsilon = 1e-12);
        let again = iprw_distance(&r, &s, &space, 2.0, &set).unwrap();
        assert_eq!(est.value.to_bits(), again.value.to_bits());
    }

    #[test]
    fn general_frames_agree_with_line_path() {
        // A 2-frame in R^2 followed by k = 1 on the projected line is not the
        // same object, so compare k-dimensional frames against the LP directly.
        let space = GroundSpace::thin_slab(2).unwrap();
        let r = dirichlet_flat(8, SeedStream::new(9)).unwrap();
        let s = dirichlet_flat(8, SeedStream::new(10)).unwrap();
        let e = sample_uniform_frame(3, 1, SeedStream::new(11)).unwrap();
        let line = iprw_distance(&r, &s, &space, 2.0, &ProjectionSet::single(e.clone())).unwrap();
        let proj = project_support(&space, &e, MERGE_TOL).unwrap();
        let ground = proj.to_ground_space().unwrap();
        let rm = ProbVector::new(proj.push_forward(r.weights())).unwrap();
        let sm = ProbVector::new(proj.push_forward(s.weights())).unwrap();
        let lp = wasserstein_lp(&rm, &sm, &ground, 2.0).unwrap().distance;
        assert_abs_diff_eq!(line.value, lp, epsilon = 1e-9);
    }

    #[test]
    fn collapsing_frame_merges_atoms() {
        let space = GroundSpace::new(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = StiefelFrame::canonical(2, 1).unwrap();
        let r = pv(&[0.5, 0.5, 0.0]);
        let s = pv(&[0.2, 0.3, 0.5]);
        let est = iprw_distance(&r, &s, &space, 1.0, &ProjectionSet::single(e)).unwrap();
        assert_abs_diff_eq!(est.value, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn derivative_examples() {
        let space = GroundSpace::grid(2).unwrap();
        let r = pv(&[0.1, 0.2, 0.3, 0.4]);
        let s = pv(&[0.25, 0.25, 0.3, 0.2]);
        let set = ProjectionSet::uniform(2, 1, 16, SeedStream::new(12)).unwrap();
        let z = DirectionVector::zeros(4);
        assert_eq!(iprw_derivative(&r, &s, &space, 1.0, &set, &z, &z).unwrap(), 0.0);
        let h1 = DirectionVector::new(vec![0.05, -0.02, 0.0, -0.03]).unwrap();
        let h2 = DirectionVector::new(vec![-0.01, 0.04, -0.05, 0.02]).unwrap();
        let d = iprw_derivative(&r, &s, &space, 2.0, &set, &h1, &h2).unwrap();
        let d3 = iprw_derivative(&r, &s, &space, 2.0, &set, &h1.scaled(3.0), &h2.scaled(3.0)).unwrap();
        assert_abs_diff_eq!(d3, 3.0 * d, epsilon = 1e-12);
        let dm = iprw_derivative(&r, &s, &space, 2.0, &set, &h1.scaled(-1.0), &h2.scaled(-1.0)).unwrap();
        assert!(d + dm >= -1e-12);
    }

    #[test]
    fn null_sampler_degenerate_and_nonnegative() {
        let space = GroundSpace::grid(2).unwrap();
        let set = ProjectionSet::uniform(2, 1, 8, SeedStream::new(13)).unwrap();
        let dirac = ProbVector::dirac(4, 2).unwrap();
        let draws = iprw_null_limit_sampler(&dirac, &space, 1.0, &set, 50, SeedStream::new(1)).unwrap();
        assert!(draws.draws.iter().all(|&x| x == 0.0));
        let r = pv(&[0.1, 0.2, 0.3, 0.4]);
        let draws = iprw_null_limit_sampler(&r, &space, 2.0, &set, 200, SeedStream::new(2)).unwrap();
        assert!(draws.draws.iter().all(|&x| x >= 0.0));
        assert_eq!(draws.regime, Regime::Null);
        assert_abs_diff_eq!(draws.scaling_exponent, 0.25);
    }

    #[test]
    fn alt_sampler_regimes() {
        let space = GroundSpace::grid(2).unwrap();
        let set = ProjectionSet::uniform(2, 1, 8, SeedStream::new(14)).unwrap();
        let r = pv(&[0.1, 0.2, 0.3, 0.4]);
        assert!(matches!(
            iprw_alt_limit_sampler(&r, &r, &space, 1.0, &set, 0.5, 10, SeedStream::new(1)),
            Err(Error::Regime(_))
        ));
        assert!(matches!(
            iprw_alt_limit_sampler(&r, &r, &space, 1.0, &set, 1.0, 10, SeedStream::new(1)),
            Err(Error::Input(_))
        ));
        let s = pv(&[0.4, 0.3, 0.2, 0.1]);
        let out = iprw_alt_limit_sampler(&r, &s, &space, 1.0, &set, 0.5, 100, SeedStream::new(1)).unwrap();
        assert_eq!(out.draws.len(), 100);
        assert_eq!(out.delta, Some(0.5));
    }

    #[test]
    fn alt_sampler_p1_has_unit_prefactor() {
        // With a nondegenerate plan the face is a point and the p = 1 law is the
        // plain linear functional of the Gaussian directions.
        let space = GroundSpace::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let set = ProjectionSet::single(StiefelFrame::canonical(1, 1).unwrap());
        let r = pv(&[0.7, 0.3]);
        let s = pv(&[0.4, 0.6]);
        let out = iprw_alt_limit_sampler(&r, &s, &space, 1.0, &set, 0.5, 2000, SeedStream::new(5)).unwrap();
        let var = crate::numeric::variance(&out.draws);
        // Derivative along (h1, h2) is h1_0 - h2_0 here, so the variance is
        // 0.5 * r0 (1 - r0) + 0.5 * s0 (1 - s0).
        let want = 0.5 * 0.21 + 0.5 * 0.24;
        assert!((var - want).abs() < 0.1 * want, "{var} vs {want}");
    }
}
