//! Ground spaces, probability vectors and the multinomial Gaussian limit.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, SeedStream};

pub const SIMPLEX_TOL: f64 = 1e-12;

/// Finite support `x_1, ..., x_N` in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSpace {
    coords: Vec<f64>,
    dim: usize,
}

impl GroundSpace {
    /// Builds a ground space from explicit points. Points must be pairwise distinct.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::input("ground space needs at least one point"))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::input("ground space dimension must be at least 1"));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::input(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::input(format!("point {i} has a non-finite coordinate")));
            }
            coords.extend_from_slice(p);
        }
        let space = GroundSpace { coords, dim };
        let n = space.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if space.point(i) == space.point(j) {
                    return Err(Error::input(format!("points {i} and {j} coincide")));
                }
            }
        }
        Ok(space)
    }

    /// Equidistant `side x side` grid on `[0, 1]^2`, row-major in the first coordinate.
    pub fn grid(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(Error::input("grid side must be at least 2"));
        }
        let step = 1.0 / (side - 1) as f64;
        let points = (0..side)
            .flat_map(|a| (0..side).map(move |b| vec![a as f64 * step, b as f64 * step]))
            .collect();
        GroundSpace::new(points)
    }

    /// The three-dimensional space `{1/M, ..., M/M} x {-0.001, 0.001} x {-0.001, 0.001}`
    /// whose distributions differ mostly along the first axis.
    pub fn thin_slab(levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::input("slab needs at least one level"));
        }
        const NOISE: [f64; 2] = [-0.001, 0.001];
        let mut points = Vec::with_capacity(4 * levels);
        for a in 1..=levels {
            for &b in &NOISE {
                for &c in &NOISE {
                    points.push(vec![a as f64 / levels as f64, b, c]);
                }
            }
        }
        GroundSpace::new(points)
    }

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

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn to_points(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    /// Largest pairwise Euclidean distance.
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.max(euclidean(self.point(i), self.point(j)));
            }
        }
        best
    }

    /// Index of the point exactly equal to `x`, if any.
    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        self.points().position(|p| p == x)
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A point of the probability simplex. Zero weights are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::input("probability vector is empty"));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::input(format!(
                "weight {i} = {} is negative or not finite",
                weights[i]
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::input(format!("weights sum to {total}, not 1")));
        }
        Ok(ProbVector(weights))
    }

    /// Normalizes nonnegative masses to unit total.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        if masses.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::input("masses must be finite and nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::input("total mass is zero"));
        }
        Ok(ProbVector(masses.iter().map(|w| w / total).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("probability vector is empty"));
        }
        Ok(ProbVector(vec![1.0 / n as f64; n]))
    }

    /// Point mass on atom `i` of an `n`-point space.
    pub fn dirac(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::input(format!("atom {i} out of range for N = {n}")));
        }
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Ok(ProbVector(w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&w| w > 0.0)
    }

    /// Copy with every weight raised to at least `floor`, renormalized.
    /// Returns `self` unchanged when it is already strictly positive.
    pub fn floored(&self, floor: f64) -> Result<ProbVector> {
        if self.is_strictly_positive() {
            return Ok(self.clone());
        }
        let m: Vec<f64> = self.0.iter().map(|w| w.max(floor)).collect();
        ProbVector::from_masses(&m)
    }

    /// Draws `count` i.i.d. atom indices.
    pub fn sample_indices(&self, count: usize, rng: &mut Rng) -> Vec<usize> {
        let dist = WeightedIndex::new(&self.0).expect("probability vector has positive mass");
        (0..count).map(|_| dist.sample(rng)).collect()
    }

    /// Empirical measure of `count` i.i.d. draws from `self`.
    pub fn sample_empirical(&self, count: usize, rng: &mut Rng) -> Result<ProbVector> {
        if count == 0 {
            return Err(Error::input("sample size must be positive"));
        }
        let dist = WeightedIndex::new(&self.0).expect("probability vector has positive mass");
        let mut counts = vec![0usize; self.len()];
        for _ in 0..count {
            counts[dist.sample(rng)] += 1;
        }
        Ok(from_counts(&counts, count))
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(value: Vec<f64>) -> Result<Self> {
        ProbVector::new(value)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(value: ProbVector) -> Self {
        value.0
    }
}

fn from_counts(counts: &[usize], total: usize) -> ProbVector {
    let n = total as f64;
    let mut w: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    // Fold rounding into the largest entry so the vector sums to 1 exactly enough.
    let err = 1.0 - w.iter().sum::<f64>();
    if let Some(k) = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])) {
        w[k] += err;
    }
    ProbVector(w)
}

/// A tangent direction of the simplex: entries sum to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionVector(Vec<f64>);

impl DirectionVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("direction has non-finite entries"));
        }
        let scale = entries.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        let total: f64 = entries.iter().sum();
        if total.abs() > SIMPLEX_TOL * scale {
            return Err(Error::input(format!("direction entries sum to {total}, not 0")));
        }
        Ok(DirectionVector(entries))
    }

    pub fn zeros(n: usize) -> Self {
        DirectionVector(vec![0.0; n])
    }

    /// Removes the mean, mapping any vector onto the tangent space.
    pub fn centered(entries: &[f64]) -> Self {
        let mean = entries.iter().sum::<f64>() / entries.len().max(1) as f64;
        DirectionVector(entries.iter().map(|x| x - mean).collect())
    }

    /// `b - a` for two probability vectors.
    pub fn between(a: &ProbVector, b: &ProbVector) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::input("probability vectors differ in length"));
        }
        DirectionVector::new(a.weights().iter().zip(b.weights()).map(|(x, y)| y - x).collect())
    }

    pub fn scaled(&self, t: f64) -> Self {
        DirectionVector(self.0.iter().map(|x| t * x).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }
}

/// Empirical distribution of atom indices (0-based) on an `N`-point space.
pub fn empirical_distribution(samples: &[usize], space: &GroundSpace) -> Result<ProbVector> {
    empirical_from_indices(samples, space.len())
}

pub(crate) fn empirical_from_indices(samples: &[usize], n: usize) -> Result<ProbVector> {
    if samples.is_empty() {
        return Err(Error::input("sample list is empty"));
    }
    let mut counts = vec![0usize; n];
    for &s in samples {
        if s >= n {
            return Err(Error::input(format!("sample index {s} out of range for N = {n}")));
        }
        counts[s] += 1;
    }
    Ok(from_counts(&counts, samples.len()))
}

/// Covariance `Sigma(r)` of a single multinomial draw, `diag(r) - r r^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    /// Wraps a matrix after checking symmetry, zero row sums and positive semidefiniteness.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || n == 0 {
            return Err(Error::input("covariance must be square and nonempty"));
        }
        for i in 0..n {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 {
                    return Err(Error::input("covariance is not symmetric"));
                }
            }
            if matrix.row(i).sum().abs() > 1e-10 {
                return Err(Error::input(format!("covariance row {i} does not sum to 0")));
            }
        }
        let min_eig = SymmetricEigen::new(matrix.clone()).eigenvalues.min();
        if min_eig < -1e-10 {
            return Err(Error::input(format!(
                "covariance is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(CovarianceMatrix(matrix))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

pub fn multinomial_covariance(r: &ProbVector) -> CovarianceMatrix {
    let w = r.weights();
    let n = w.len();
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            w[i] * (1.0 - w[i])
        } else {
            -w[i] * w[j]
        }
    });
    CovarianceMatrix(m)
}

/// Reusable `N(0, Sigma)` sampler built from a clamped symmetric square root.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    root: DMatrix<f64>,
    rank: usize,
}

impl GaussianSampler {
    pub fn new(sigma: &CovarianceMatrix) -> Self {
        let n = sigma.dim();
        let eig = SymmetricEigen::new(sigma.matrix().clone());
        let cols: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.0).collect();
        let mut root = DMatrix::zeros(n, cols.len());
        for (c, &k) in cols.iter().enumerate() {
            let scale = eig.eigenvalues[k].sqrt();
            for i in 0..n {
                root[(i, c)] = eig.eigenvectors[(i, k)] * scale;
            }
        }
        // Coordinates with zero variance are identically zero.
        for i in 0..n {
            if sigma.matrix()[(i, i)] == 0.0 {
                root.row_mut(i).fill(0.0);
            }
        }
        GaussianSampler {
            rank: cols.len(),
            root,
        }
    }

    pub fn dim(&self) -> usize {
        self.root.nrows()
    }

    pub fn draw(&self, rng: &mut Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.rank).map(|_| StandardNormal.sample(rng)).collect();
        let n = self.dim();
        let mut g = vec![0.0; n];
        for (c, zc) in z.iter().enumerate() {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += self.root[(i, c)] * zc;
            }
        }
        g
    }
}

pub fn sample_limit_gaussian(
    sigma: &CovarianceMatrix,
    count: usize,
    seed: SeedStream,
) -> Vec<Vec<f64>> {
    let sampler = GaussianSampler::new(sigma);
    let mut rng = seed.rng();
    (0..count).map(|_| sampler.draw(&mut rng)).collect()
}

/// Uniform draw on the simplex, `Dir(1, ..., 1)`.
pub fn dirichlet_flat(n: usize, seed: SeedStream) -> Result<ProbVector> {
    if n == 0 {
        return Err(Error::input("Dirichlet dimension must be at least 1"));
    }
    let mut rng = seed.rng();
    Ok(dirichlet_with(n, &mut rng))
}

pub(crate) fn dirichlet_with(n: usize, rng: &mut Rng) -> ProbVector {
    loop {
        let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
        if let Ok(p) = ProbVector::from_masses(&e) {
            return p;
        }
    }
}
