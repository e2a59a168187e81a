//! Entropically regularized transport: log-domain Sinkhorn, the Sinkhorn
//! divergence `<c, pi_lambda>^{1/p}`, and the sensitivity of the regularized
//! plan to its marginals.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_transport::{cost_vector, CostVector};
use crate::measures::{GroundSpace, ProbVector};

pub use crate::exact_transport::{constraint_matrices, ConstraintMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Stop once the L1 marginal residual is at most `tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting column potentials `g` (length `N`); zeros when absent.
    #[serde(default)]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: 1e-10,
            max_iter: 100_000,
            warm_start: None,
        }
    }
}

impl SinkhornOptions {
    pub fn with_tol(tol: f64) -> Self {
        SinkhornOptions {
            tol,
            ..Default::default()
        }
    }
}

/// The unique minimizer of `<c, pi> + lambda * phi(pi)` over couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedPlan {
    n: usize,
    pub entries: Vec<f64>,
    pub lambda: f64,
    /// Row and column potentials: `pi_ij = exp((f_i + g_j - c_ij) / lambda)`.
    pub row_potential: Vec<f64>,
    pub col_potential: Vec<f64>,
    /// `<c, pi>`
    pub transport_cost: f64,
    pub residual: f64,
    pub iterations: usize,
    /// L1 marginal residual sampled every 10 iterations.
    pub residual_trace: Vec<f64>,
}

impl RegularizedPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Multipliers `mu` of the reduced constraints `A_* pi = (r, s_*)`, so that
    /// `c + lambda log(pi) - A_*^T mu = 0`.
    pub fn dual_potentials(&self) -> Vec<f64> {
        let n = self.n;
        let gn = self.col_potential[n - 1];
        self.row_potential
            .iter()
            .map(|f| f + gn)
            .chain(self.col_potential[..n - 1].iter().map(|g| g - gn))
            .collect()
    }

    pub fn is_interior(&self) -> bool {
        self.entries.iter().all(|&x| x > 0.0)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Sinkhorn on raw marginals. `r` and `s` must be nonnegative with equal total
/// mass; the mass need not be one, which lets callers perturb `(r, s_*)` freely.
/// Atoms with zero mass get identically zero plan rows or columns.
pub fn sinkhorn_with_cost(
    r: &[f64],
    s: &[f64],
    cost: &CostVector,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<RegularizedPlan> {
    let n = cost.n();
    if r.len() != n || s.len() != n {
        return Err(Error::input("marginal length does not match the cost"));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::input(format!("lambda must be positive, got {lambda}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::input("tolerance must be positive"));
    }
    if r.iter().chain(s).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::input("marginals must be finite and nonnegative"));
    }
    let (mr, ms): (f64, f64) = (r.iter().sum(), s.iter().sum());
    if mr <= 0.0 || (mr - ms).abs() > 1e-12 * mr.max(1.0) {
        return Err(Error::input(format!("marginal masses differ: {mr} vs {ms}")));
    }

    let rows: Vec<usize> = (0..n).filter(|&i| r[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| s[j] > 0.0).collect();
    let log_r: Vec<f64> = r.iter().map(|x| x.ln()).collect();
    let log_s: Vec<f64> = s.iter().map(|x| x.ln()).collect();
    // Scaled negative costs, -c_ij / lambda.
    let kernel: Vec<f64> = cost.entries().iter().map(|c| -c / lambda).collect();

    let mut f = vec![f64::NEG_INFINITY; n];
    let mut g = vec![f64::NEG_INFINITY; n];
    for &j in &cols {
        g[j] = match &opts.warm_start {
            Some(w) if w.len() == n && w[j].is_finite() => w[j] / lambda,
            _ => 0.0,
        };
    }
    // Potentials are kept divided by lambda inside the loop.
    let mut lse_row = vec![0.0; n];
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..=opts.max_iter {
        for &i in &rows {
            let k = &kernel[i * n..(i + 1) * n];
            lse_row[i] = log_sum_exp(cols.iter().map(|&j| g[j] + k[j]));
        }
        if it > 0 {
            // Columns are exact after the g-update; rows carry the residual.
            residual = rows.iter().map(|&i| ((f[i] + lse_row[i]).exp() - r[i]).abs()).sum();
            if (it - 1) % 10 == 0 {
                trace.push(residual);
            }
            if residual <= opts.tol {
                iterations = it;
                converged = true;
                break;
            }
        }
        if it == opts.max_iter {
            iterations = it;
            break;
        }
        for &i in &rows {
            f[i] = log_r[i] - lse_row[i];
        }
        for &j in &cols {
            let lse = log_sum_exp(rows.iter().map(|&i| f[i] + kernel[i * n + j]));
            g[j] = log_s[j] - lse;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            solver: "sinkhorn",
            iterations,
            residual,
        });
    }
    let mut entries = vec![0.0; n * n];
    for &i in &rows {
        for &j in &cols {
            entries[i * n + j] = (f[i] + g[j] + kernel[i * n + j]).exp();
        }
    }
    let transport_cost = entries.iter().zip(cost.entries()).map(|(p, c)| p * c).sum();
    Ok(RegularizedPlan {
        n,
        entries,
        lambda,
        row_potential: f.iter().map(|x| x * lambda).collect(),
        col_potential: g.iter().map(|x| x * lambda).collect(),
        transport_cost,
        residual,
        iterations,
        residual_trace: trace,
    })
}

pub fn sinkhorn_plan(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<RegularizedPlan> {
    if r.len() != space.len() || s.len() != space.len() {
        return Err(Error::input("distribution length does not match support"));
    }
    let cost = cost_vector(space, p)?;
    sinkhorn_with_cost(r.weights(), s.weights(), &cost, lambda, opts)
}

/// `W_{p,lambda}(r, s) = <c_p, pi_{p,lambda}>^{1/p}`, without debiasing.
pub fn sinkhorn_divergence(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<f64> {
    let plan = sinkhorn_plan(r, s, space, p, lambda, opts)?;
    Ok(plan.transport_cost.max(0.0).powf(1.0 / p))
}

/// `J = D A_*^T (A_* D A_*^T)^{-1}`, the derivative of the regularized plan
/// with respect to `(r, s_*)`; `N^2 x (2N - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanJacobian {
    pub matrix: DMatrix<f64>,
}

impl PlanJacobian {
    /// Predicted plan change for a marginal perturbation `(h1, h2_*)`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        (&self.matrix * nalgebra::DVector::from_column_slice(h))
            .iter()
            .copied()
            .collect()
    }

    /// `J^T gamma`, the gradient of `<gamma, pi>` with respect to `(r, s_*)`.
    pub fn transpose_apply(&self, gamma: &[f64]) -> Vec<f64> {
        (self.matrix.transpose() * nalgebra::DVector::from_column_slice(gamma))
            .iter()
            .copied()
            .collect()
    }
}

/// Cholesky factor of `A_* D A_*^T` for an interior plan.
pub(crate) fn reduced_gram(plan: &RegularizedPlan) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let n = plan.n();
    if let Some(k) = plan.entries.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::Degeneracy(format!(
            "plan entry ({}, {}) is not positive; the Jacobian needs strictly positive marginals",
            k / n,
            k % n
        )));
    }
    let m = 2 * n - 1;
    let pi = &plan.entries;
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            let x = pi[i * n + j];
            gram[(i, i)] += x;
            if j < n - 1 {
                gram[(n + j, n + j)] += x;
                gram[(i, n + j)] += x;
                gram[(n + j, i)] += x;
            }
        }
    }
    Cholesky::new(gram).ok_or_else(|| Error::Degeneracy("A_* D A_*^T is not positive definite".into()))
}

pub fn plan_jacobian(plan: &RegularizedPlan) -> Result<PlanJacobian> {
    let n = plan.n();
    let m = 2 * n - 1;
    let chol = reduced_gram(plan)?;
    let inv = chol.inverse();
    let mut matrix = DMatrix::zeros(n * n, m);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            let w = plan.entries[row];
            for k in 0..m {
                let mut a = inv[(i, k)];
                if j < n - 1 {
                    a += inv[(n + j, k)];
                }
                matrix[(row, k)] = w * a;
            }
        }
    }
    Ok(PlanJacobian { matrix })
}

/// `A_* x` for a plan-shaped vector: row sums, then the first `N - 1` column sums.
pub(crate) fn reduced_marginals(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * n - 1];
    for i in 0..n {
        for j in 0..n {
            let v = x[i * n + j];
            out[i] += v;
            if j < n - 1 {
                out[n + j] += v;
            }
        }
    }
    out
}
