//! Frames on the Stiefel manifold `S_{d,k}`, projected supports, and the QR
//! retraction used by the PRW ascent.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::measures::GroundSpace;
use crate::numeric::pairwise_sum;
use crate::rng::{Rng, SeedStream};

pub const FRAME_TOL: f64 = 1e-10;
pub const MERGE_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-12;

/// A `d x k` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelFrame {
    matrix: DMatrix<f64>,
}

impl StiefelFrame {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (d, k) = matrix.shape();
        if k == 0 || k > d {
            return Err(Error::input(format!("frame shape {d}x{k} needs 1 <= k <= d")));
        }
        let err = orthonormality_error(&matrix);
        if !(err <= FRAME_TOL) {
            return Err(Error::input(format!("columns are not orthonormal (error {err:e})")));
        }
        Ok(StiefelFrame { matrix })
    }

    /// Builds from column vectors of length `d`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.len();
        let d = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::input("frame columns differ in length"));
        }
        Self::new(DMatrix::from_fn(d, k, |i, j| columns[j][i]))
    }

    /// The first `k` standard basis vectors of `R^d`.
    pub fn canonical(d: usize, k: usize) -> Result<Self> {
        Self::new(DMatrix::identity(d, k))
    }

    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `E^T x`
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let (d, k) = self.matrix.shape();
        (0..k)
            .map(|j| (0..d).map(|i| self.matrix[(i, j)] * x[i]).sum())
            .collect()
    }

    /// Right rotation `E R`.
    pub fn rotated(&self, r: &DMatrix<f64>) -> Result<Self> {
        Self::new(&self.matrix * r)
    }
}

pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let k = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - want).abs());
        }
    }
    worst
}

/// Thin QR factor `Q` with positive diagonal in `R`, by twice-iterated
/// modified Gram-Schmidt. `None` when the columns are numerically dependent.
pub fn orthonormalize(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (d, k) = m.shape();
    let mut q = m.clone();
    for j in 0..k {
        let original = q.column(j).norm();
        if !(original.is_finite() && original > 0.0) {
            return None;
        }
        for _ in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                for row in 0..d {
                    q[(row, j)] -= proj * q[(row, i)];
                }
            }
        }
        let norm = q.column(j).norm();
        if norm <= RANK_TOL * original {
            return None;
        }
        q.column_mut(j).unscale_mut(norm);
    }
    Some(q)
}

pub(crate) fn sample_frame_with(d: usize, k: usize, rng: &mut Rng) -> Result<StiefelFrame> {
    if k == 0 || k > d {
        return Err(Error::input(format!("frame needs 1 <= k <= d, got d = {d}, k = {k}")));
    }
    loop {
        let g = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(rng));
        if let Some(q) = orthonormalize(&g) {
            return Ok(StiefelFrame { matrix: q });
        }
    }
}

/// Haar-distributed frame: the `Q` factor of a Gaussian `d x k` matrix with
/// the sign fixed by a positive `R` diagonal.
pub fn sample_uniform_frame(d: usize, k: usize, seed: SeedStream) -> Result<StiefelFrame> {
    sample_frame_with(d, k, &mut seed.rng())
}

/// Tangent-space projection `G - E sym(E^T G)`.
pub fn tangent_projection(e: &StiefelFrame, g: &DMatrix<f64>) -> DMatrix<f64> {
    let etg = e.matrix.transpose() * g;
    let sym = (&etg + etg.transpose()) * 0.5;
    g - &e.matrix * sym
}

/// `qf(E + step * tangent)`; `step = 0` returns `E` unchanged.
pub fn qr_retract(e: &StiefelFrame, tangent: &DMatrix<f64>, step: f64) -> Result<StiefelFrame> {
    if tangent.shape() != e.matrix.shape() {
        return Err(Error::input("tangent shape does not match the frame"));
    }
    if step == 0.0 {
        return Ok(e.clone());
    }
    let y = &e.matrix + tangent * step;
    orthonormalize(&y)
        .map(|matrix| StiefelFrame { matrix })
        .ok_or_else(|| Error::Retraction(format!("rank deficient after a step of {step:e}")))
}

/// `min_R ||E_1 R - E_2||_F` over orthogonal `k x k` matrices `R`, attained at
/// the polar factor of `E_1^T E_2`.
pub fn aligned_distance(a: &StiefelFrame, b: &StiefelFrame) -> f64 {
    let m = a.matrix.transpose() * &b.matrix;
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let r = u * vt;
    (&a.matrix * r - &b.matrix).norm()
}

/// A discretized measure on `S_{d,k}`: frames with positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    frames: Vec<StiefelFrame>,
    weights: Vec<f64>,
    measure_tag: String,
}

impl ProjectionSet {
    pub fn new(frames: Vec<StiefelFrame>, weights: Vec<f64>, measure_tag: impl Into<String>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::input("projection set needs at least one frame"));
        }
        if weights.len() != frames.len() {
            return Err(Error::input("one weight per frame required"));
        }
        let (d, k) = (frames[0].d(), frames[0].k());
        if frames.iter().any(|f| f.d() != d || f.k() != k) {
            return Err(Error::input("frames differ in shape"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::input("frame weights must be positive"));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("frame weights sum to {total}")));
        }
        Ok(ProjectionSet {
            frames,
            weights,
            measure_tag: measure_tag.into(),
        })
    }

    pub fn equal_weights(frames: Vec<StiefelFrame>, measure_tag: impl Into<String>) -> Result<Self> {
        let t = frames.len().max(1);
        Self::new(frames, vec![1.0 / t as f64; t], measure_tag)
    }

    /// `T` Monte-Carlo frames from the uniform measure with equal weights.
    /// Frame `t` depends only on `seed` and `t`, so sets with the same seed nest.
    pub fn uniform(d: usize, k: usize, count: usize, seed: SeedStream) -> Result<Self> {
        if count == 0 {
            return Err(Error::input("projection set needs at least one frame"));
        }
        let frames = (0..count)
            .map(|t| sample_uniform_frame(d, k, seed.derive(t as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::equal_weights(frames, format!("uniform(d={d},k={k},T={count},seed={})", seed.seed()))
    }

    /// A single frame with unit weight.
    pub fn single(frame: StiefelFrame) -> Self {
        ProjectionSet {
            frames: vec![frame],
            weights: vec![1.0],
            measure_tag: "single".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[StiefelFrame] {
        &self.frames
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn measure_tag(&self) -> &str {
        &self.measure_tag
    }

    pub fn d(&self) -> usize {
        self.frames[0].d()
    }

    pub fn k(&self) -> usize {
        self.frames[0].k()
    }
}

/// The projected support `X_E` with colliding atoms merged.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSpace {
    coords: Vec<f64>,
    dim: usize,
    merge_map: Vec<usize>,
}

impl ProjectedSpace {
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Original atom index to merged atom index.
    pub fn merge_map(&self) -> &[usize] {
        &self.merge_map
    }

    pub fn has_merges(&self) -> bool {
        self.len() < self.merge_map.len()
    }

    /// Sums a vector on the original atoms along the merge map.
    pub fn push_forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (v, &m) in x.iter().zip(&self.merge_map) {
            out[m] += v;
        }
        out
    }

    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(crate::measures::euclidean(self.point(i), self.point(j)));
            }
        }
        best
    }

    pub fn to_ground_space(&self) -> Result<GroundSpace> {
        GroundSpace::new(self.coords.chunks(self.dim).map(<[f64]>::to_vec).collect())
    }
}

/// Projects every atom by `E^T` and merges atoms closer than `merge_tol`
/// (each joins the first earlier representative within range).
pub fn project_support(space: &GroundSpace, e: &StiefelFrame, merge_tol: f64) -> Result<ProjectedSpace> {
    if e.d() != space.dim() {
        return Err(Error::input(format!(
            "frame dimension {} does not match support dimension {}",
            e.d(),
            space.dim()
        )));
    }
    let k = e.k();
    let mut coords: Vec<f64> = Vec::with_capacity(space.len() * k);
    let mut merge_map = Vec::with_capacity(space.len());
    for x in space.points() {
        let y = e.project(x);
        let found = coords
            .chunks(k)
            .position(|c| crate::measures::euclidean(c, &y) <= merge_tol);
        match found {
            Some(m) => merge_map.push(m),
            None => {
                merge_map.push(coords.len() / k);
                coords.extend_from_slice(&y);
            }
        }
    }
    Ok(ProjectedSpace { coords, dim: k, merge_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sampled_frames_are_orthonormal() {
        for (d, k) in [(3, 1), (5, 2), (4, 4), (10, 3)] {
            let e = sample_uniform_frame(d, k, SeedStream::new(d as u64 * 7 + k as u64)).unwrap();
            assert!(orthonormality_error(e.matrix()) <= 1e-10);
            assert_eq!((e.d(), e.k()), (d, k));
        }
        let e = sample_uniform_frame(3, 1, SeedStream::new(1)).unwrap();
        assert_abs_diff_eq!(e.matrix().column(0).norm(), 1.0, epsilon = 1e-12);
        assert!(matches!(sample_uniform_frame(2, 3, SeedStream::new(1)), Err(Error::Input(_))));
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_uniform_frame(4, 2, SeedStream::new(9)).unwrap();
        let b = sample_uniform_frame(4, 2, SeedStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_marginal_moments() {
        // First coordinate of a uniform point on S^2 is U(-1, 1): mean 0, variance 1/3.
        let set = ProjectionSet::uniform(3, 1, 100_000, SeedStream::new(2024)).unwrap();
        let xs: Vec<f64> = set.frames().iter().map(|f| f.matrix()[(0, 0)]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn orthogonal_direction_collapses_support() {
        let space = GroundSpace::new(vec![vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let e = StiefelFrame::canonical(2, 1).unwrap();
        let proj = project_support(&space, &e, MERGE_TOL).unwrap();
        assert_eq!(proj.len(), 1);
        assert_eq!(proj.merge_map(), &[0, 0]);
        assert_eq!(proj.push_forward(&[0.3, 0.7]), vec![1.0]);
    }

    #[test]
    fn full_frame_keeps_distances() {
        let space = GroundSpace::grid(3).unwrap();
        let e = sample_uniform_frame(2, 2, SeedStream::new(5)).unwrap();
        let proj = project_support(&space, &e, MERGE_TOL).unwrap();
        assert!(!proj.has_merges());
        for i in 0..space.len() {
            for j in 0..space.len() {
                let a = crate::measures::euclidean(space.point(i), space.point(j));
                let b = crate::measures::euclidean(proj.point(i), proj.point(j));
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn right_rotation_preserves_projected_distances() {
        let space = GroundSpace::thin_slab(3).unwrap();
        let mut rng = SeedStream::new(11).rng();
        for _ in 0..20 {
            let e = sample_frame_with(3, 2, &mut rng).unwrap();
            let r = sample_frame_with(2, 2, &mut rng).unwrap();
            let er = e.rotated(r.matrix()).unwrap();
            let a = project_support(&space, &e, MERGE_TOL).unwrap();
            let b = project_support(&space, &er, MERGE_TOL).unwrap();
            for i in 0..a.len() {
                for j in 0..a.len() {
                    let da = crate::measures::euclidean(a.point(i), a.point(j));
                    let db = crate::measures::euclidean(b.point(i), b.point(j));
                    assert_abs_diff_eq!(da, db, epsilon = 1e-12);
                }
            }
            assert!(aligned_distance(&e, &er) < 1e-10);
        }
    }

    #[test]
    fn projected_diameter_bound() {
        let space = GroundSpace::thin_slab(4).unwrap();
        let mut rng = SeedStream::new(3).rng();
        for k in 1..=3 {
            for _ in 0..10 {
                let e = sample_frame_with(3, k, &mut rng).unwrap();
                let proj = project_support(&space, &e, MERGE_TOL).unwrap();
                assert!(proj.diameter() <= k as f64 * space.diameter() + 1e-12);
            }
        }
    }

    #[test]
    fn retraction_examples() {
        let e = sample_uniform_frame(5, 2, SeedStream::new(8)).unwrap();
        let v = DMatrix::from_fn(5, 2, |i, j| (i as f64 - j as f64) * 0.3);
        assert_eq!(qr_retract(&e, &v, 0.0).unwrap(), e);
        let tiny = qr_retract(&e, &v, 1e-9).unwrap();
        assert!((tiny.matrix() - e.matrix()).amax() <= 1e-8);
        let big = qr_retract(&e, &v, 3.0).unwrap();
        assert!(orthonormality_error(big.matrix()) <= 1e-10);
        let collapse = DMatrix::from_fn(5, 2, |i, j| -e.matrix()[(i, j)]);
        assert!(matches!(qr_retract(&e, &collapse, 1.0), Err(Error::Retraction(_))));
    }

    #[test]
    fn tangent_projection_is_tangent() {
        let e = sample_uniform_frame(4, 2, SeedStream::new(4)).unwrap();
        let g = DMatrix::from_fn(4, 2, |i, j| (i * 3 + j) as f64 - 2.5);
        let t = tangent_projection(&e, &g);
        let s = e.matrix().transpose() * &t;
        assert!((&s + s.transpose()).amax() < 1e-12);
    }

    #[test]
    fn aligned_distance_ignores_sign_for_lines() {
        let a = StiefelFrame::from_columns(&[vec![0.6, 0.8]]).unwrap();
        let b = StiefelFrame::from_columns(&[vec![-0.6, -0.8]]).unwrap();
        assert!(aligned_distance(&a, &b) < 1e-12);
        let c = StiefelFrame::from_columns(&[vec![0.8, -0.6]]).unwrap();
        assert_abs_diff_eq!(aligned_distance(&a, &c), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn projection_set_validation() {
        let e = StiefelFrame::canonical(2, 1).unwrap();
        assert!(ProjectionSet::new(vec![e.clone()], vec![0.5], "x").is_err());
        assert!(ProjectionSet::new(vec![], vec![], "x").is_err());
        let set = ProjectionSet::uniform(3, 1, 8, SeedStream::new(1)).unwrap();
        let bigger = ProjectionSet::uniform(3, 1, 16, SeedStream::new(1)).unwrap();
        assert_eq!(&bigger.frames()[..8], set.frames());
    }
}
