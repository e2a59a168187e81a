//! Exact optimal transport on a finite support.
//!
//! All plans and cost vectors use the row-major layout `k = i * N + j` for the
//! cell moving mass from atom `i` to atom `j`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DirectionVector, GroundSpace, ProbVector};
use crate::network_simplex;
use crate::simplex::{LpOutcome, StandardLp};

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const DUALITY_GAP_TOL: f64 = 1e-8;
/// Plan entries above this are treated as part of the optimal support.
const SUPPORT_TOL: f64 = 1e-13;

/// Pairwise `||x_i - x_j||^p` on `N` points, `N^2` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    entries: Vec<f64>,
    n: usize,
    p: f64,
}

impl CostVector {
    /// Builds the cost from row-major coordinates of dimension `dim`.
    pub fn from_coords(coords: &[f64], dim: usize, p: f64) -> Self {
        let n = coords.len() / dim;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            let xi = &coords[i * dim..(i + 1) * dim];
            for j in (i + 1)..n {
                let xj = &coords[j * dim..(j + 1) * dim];
                let d2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                let c = power_of_norm(d2, p);
                entries[i * n + j] = c;
                entries[j * n + i] = c;
            }
        }
        CostVector { entries, n, p }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |a, &b| a.max(b))
    }
}

/// `||z||^p` from `||z||^2`, exact for even integer `p`.
pub(crate) fn power_of_norm(norm_sq: f64, p: f64) -> f64 {
    if p == 2.0 {
        norm_sq
    } else if p == 1.0 {
        norm_sq.sqrt()
    } else {
        norm_sq.powf(p / 2.0)
    }
}

pub(crate) fn check_order(p: f64) -> Result<()> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::input(format!("order p must be >= 1, got {p}")));
    }
    Ok(())
}

pub fn cost_vector(space: &GroundSpace, p: f64) -> Result<CostVector> {
    check_order(p)?;
    let coords: Vec<f64> = space.points().flatten().copied().collect();
    Ok(CostVector::from_coords(&coords, space.dim(), p))
}

/// The marginal operator `A` (`2N x N^2`) and its reduction `A_*` without the last row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    pub full: DMatrix<f64>,
    pub reduced: DMatrix<f64>,
}

pub fn constraint_matrices(n: usize) -> Result<ConstraintMatrix> {
    if n == 0 {
        return Err(Error::input("support size must be at least 1"));
    }
    let mut full = DMatrix::zeros(2 * n, n * n);
    for i in 0..n {
        for j in 0..n {
            full[(i, i * n + j)] = 1.0;
            full[(n + j, i * n + j)] = 1.0;
        }
    }
    let reduced = full.rows(0, 2 * n - 1).into_owned();
    Ok(ConstraintMatrix { full, reduced })
}

/// Applies `A` to a plan: row sums followed by column sums.
pub fn marginals(plan: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            rows[i] += plan[i * n + j];
            cols[j] += plan[i * n + j];
        }
    }
    (rows, cols)
}

/// Largest absolute deviation of the plan's marginals from `(r, s)`.
pub fn marginal_residual(plan: &[f64], r: &[f64], s: &[f64]) -> f64 {
    let (rows, cols) = marginals(plan, r.len());
    rows.iter()
        .zip(r)
        .chain(cols.iter().zip(s))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub entries: Vec<f64>,
    /// `<c, pi>`
    pub value: f64,
}

/// Dual potentials with `u_i + v_j <= c_ij`. Which optimal vertex is returned
/// depends on the solver path and is not part of the contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl DualPair {
    pub fn objective(&self, r: &[f64], s: &[f64]) -> f64 {
        dot(&self.u, r) + dot(&self.v, s)
    }

    /// Largest violation of `u_i + v_j <= c_ij`, zero when feasible.
    pub fn max_violation(&self, cost: &CostVector) -> f64 {
        let n = cost.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max(self.u[i] + self.v[j] - cost.get(i, j));
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WassersteinSolution {
    /// `W_p`, the p-th root of the optimal cost.
    pub distance: f64,
    pub plan: TransportPlan,
    pub dual: DualPair,
}

impl WassersteinSolution {
    /// `W_p^p`
    pub fn cost(&self) -> f64 {
        self.plan.value
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(r: &ProbVector, s: &ProbVector, n: usize) -> Result<()> {
    if r.len() != n || s.len() != n {
        return Err(Error::input(format!(
            "distributions of length {} and {} on a support of size {n}",
            r.len(),
            s.len()
        )));
    }
    Ok(())
}

/// Exact transport between two measures with the same mass on a cost vector.
pub fn transport_with_cost(r: &[f64], s: &[f64], cost: &CostVector) -> Result<WassersteinSolution> {
    let sol = network_simplex::solve(r, s, cost.entries())?;
    let residual = marginal_residual(&sol.plan, r, s);
    let gap = (dot(&sol.u, r) + dot(&sol.v, s) - sol.cost).abs();
    let dual = DualPair { u: sol.u, v: sol.v };
    let violation = dual.max_violation(cost);
    let cscale = cost.max().max(1.0);
    if residual > FEASIBILITY_TOL || gap > DUALITY_GAP_TOL * cscale || violation > FEASIBILITY_TOL * cscale {
        return Err(Error::Convergence {
            solver: "transport simplex",
            iterations: sol.iterations,
            residual: residual.max(gap).max(violation),
        });
    }
    let value = sol.cost.max(0.0);
    Ok(WassersteinSolution {
        distance: value.powf(1.0 / cost.p()),
        plan: TransportPlan {
            entries: sol.plan,
            value,
        },
        dual,
    })
}

pub fn wasserstein_lp(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
) -> Result<WassersteinSolution> {
    check_pair(r, s, space.len())?;
    let cost = cost_vector(space, p)?;
    transport_with_cost(r.weights(), s.weights(), &cost)
}

fn sorted_order(points: &[f64]) -> Option<Vec<usize>> {
    if points.windows(2).all(|w| w[0] < w[1]) {
        return None;
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    Some(order)
}

/// Walks the monotone (quantile) coupling of two measures on the line,
/// calling `visit(i, j, mass)` for each cell; `order` lists atoms by position.
pub(crate) fn monotone_coupling(
    r: &[f64],
    s: &[f64],
    order: &[usize],
    mut visit: impl FnMut(usize, usize, f64),
) {
    let n = order.len();
    let (mut a, mut b) = (0usize, 0usize);
    let (mut ra, mut sb) = (r[order[0]], s[order[0]]);
    loop {
        while ra <= 0.0 {
            a += 1;
            if a == n {
                return;
            }
            ra = r[order[a]];
        }
        while sb <= 0.0 {
            b += 1;
            if b == n {
                return;
            }
            sb = s[order[b]];
        }
        let m = ra.min(sb);
        visit(order[a], order[b], m);
        ra -= m;
        sb -= m;
    }
}

/// One-dimensional `W_p` through the quantile coupling. Points need not be
/// sorted; ties are harmless.
pub fn wasserstein_1d(r: &ProbVector, s: &ProbVector, points: &[f64], p: f64) -> Result<f64> {
    check_order(p)?;
    check_pair(r, s, points.len())?;
    let order = sorted_order(points).unwrap_or_else(|| (0..points.len()).collect());
    Ok(wasserstein_1d_cost(r.weights(), s.weights(), points, &order, p).powf(1.0 / p))
}

/// `W_p^p` on the line for presorted `order`.
pub(crate) fn wasserstein_1d_cost(r: &[f64], s: &[f64], points: &[f64], order: &[usize], p: f64) -> f64 {
    let mut total = 0.0;
    monotone_coupling(r, s, order, |i, j, m| {
        let d = (points[i] - points[j]).abs();
        total += m * if p == 1.0 { d } else { d.powf(p) };
    });
    total
}

/// Maximum of `<u, h1> + <v, h2>` over the optimal dual face, described by
/// complementary slackness with an optimal plan: `u_i + v_j = c_ij` on the
/// plan's support and `<=` elsewhere, with `u_N = 0` pinned.
///
/// Solved in standard form as the dual LP
/// `min <c, f>  s.t.  A_red f = (h1_red, h2)`, `f >= 0` off the support and
/// free on it.
pub(crate) fn face_max(cost: &CostVector, plan: &[f64], h1: &[f64], h2: &[f64]) -> Result<f64> {
    let n = cost.n();
    if n == 1 {
        return Ok(0.0);
    }
    if let Some((u, v)) = tree_duals(cost, plan) {
        return Ok(dot(&u, h1) + dot(&v, h2));
    }
    face_max_lp(cost, plan, h1, h2)
}

fn face_max_lp(cost: &CostVector, plan: &[f64], h1: &[f64], h2: &[f64]) -> Result<f64> {
    let n = cost.n();
    let rows = 2 * n - 1;
    let mut b = Vec::with_capacity(rows);
    b.extend_from_slice(&h1[..n - 1]);
    b.extend_from_slice(h2);
    let mut lp = StandardLp::new(rows, b);
    let mut entries = Vec::with_capacity(2);
    for i in 0..n {
        for j in 0..n {
            entries.clear();
            if i < n - 1 {
                entries.push((i, 1.0));
            }
            entries.push((n - 1 + j, 1.0));
            let c = cost.get(i, j);
            if plan[i * n + j] > SUPPORT_TOL {
                lp.push_free_column(c, &entries);
            } else {
                lp.push_column(c, &entries);
            }
        }
    }
    match lp.solve()? {
        LpOutcome::Optimal { value, .. } => Ok(value),
        LpOutcome::Infeasible => Err(Error::Internal(
            "dual face LP unbounded: direction leaves the simplex at a zero-mass atom".into(),
        )),
        LpOutcome::Unbounded => Err(Error::Internal("dual face LP infeasible".into())),
    }
}

/// When the plan's support is a spanning tree of the bipartite graph the
/// optimal dual is unique up to the gauge and follows from `u_i + v_j = c_ij`.
fn tree_duals(cost: &CostVector, plan: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = cost.n();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); 2 * n];
    let mut edges = 0;
    for i in 0..n {
        for j in 0..n {
            if plan[i * n + j] > SUPPORT_TOL {
                adj[i].push(n + j);
                adj[n + j].push(i);
                edges += 1;
            }
        }
    }
    if edges != 2 * n - 1 {
        return None;
    }
    let mut pot = vec![f64::NAN; 2 * n];
    pot[n - 1] = 0.0;
    let mut stack = vec![n - 1];
    let mut seen = 1;
    while let Some(x) = stack.pop() {
        for &y in &adj[x] {
            if pot[y].is_nan() {
                let (i, j) = if x < n { (x, y - n) } else { (y, x - n) };
                pot[y] = cost.get(i, j) - pot[x];
                seen += 1;
                stack.push(y);
            }
        }
    }
    if seen != 2 * n {
        return None;
    }
    let v = pot.split_off(n);
    Some((pot, v))
}

/// `max <u, h1> + <v, h2>` over the optimal dual set of `W_p^p(r, s)`: the
/// directional derivative of `W_p^p` along `(h1, h2)`.
pub fn dual_face_max(
    r: &ProbVector,
    s: &ProbVector,
    space: &GroundSpace,
    p: f64,
    h1: &DirectionVector,
    h2: &DirectionVector,
) -> Result<f64> {
    check_pair(r, s, space.len())?;
    if h1.len() != space.len() || h2.len() != space.len() {
        return Err(Error::input("direction length does not match support"));
    }
    let cost = cost_vector(space, p)?;
    let sol = transport_with_cost(r.weights(), s.weights(), &cost)?;
    face_max(&cost, &sol.plan.entries, h1.entries(), h2.entries())
}

fn check_balanced(g: &[f64]) -> Result<()> {
    let scale = g.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
    let total: f64 = g.iter().sum();
    if total.abs() > 1e-9 * scale {
        return Err(Error::input(format!("vector sums to {total}, expected 0")));
    }
    Ok(())
}

/// `max <g, u>` over `u_i - u_j <= c_ij` with `u_N = 0`, via its dual
/// uncapacitated min-cost flow `min <c, f>` with node imbalances `g`.
pub fn null_dual_max_cost(cost: &CostVector, g: &[f64]) -> Result<f64> {
    check_balanced(g)?;
    let n = cost.n();
    if n == 1 {
        return Ok(0.0);
    }
    let mut lp = StandardLp::new(n - 1, g[..n - 1].to_vec());
    let mut entries = Vec::with_capacity(2);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            entries.clear();
            if i < n - 1 {
                entries.push((i, 1.0));
            }
            if j < n - 1 {
                entries.push((j, -1.0));
            }
            lp.push_column(cost.get(i, j), &entries);
        }
    }
    match lp.solve()? {
        LpOutcome::Optimal { value, .. } => Ok(value.max(0.0)),
        other => Err(Error::Internal(format!("null dual LP ended as {other:?}"))),
    }
}

pub fn null_dual_max(space: &GroundSpace, p: f64, g: &[f64]) -> Result<f64> {
    if g.len() != space.len() {
        return Err(Error::input("vector length does not match support"));
    }
    let cost = cost_vector(space, p)?;
    null_dual_max_cost(&cost, g)
}

/// Closed form of [`null_dual_max`] on the line: with atoms sorted and `G_k`
/// the running sum of `g`, the value is `sum_k |G_k| (y_{k+1} - y_k)^p`.
/// Only consecutive constraints bind because `a^p + b^p <= (a + b)^p`.
pub fn null_dual_max_line(points: &[f64], p: f64, g: &[f64]) -> Result<f64> {
    check_order(p)?;
    check_balanced(g)?;
    if points.len() != g.len() {
        return Err(Error::input("vector length does not match support"));
    }
    let order = sorted_order(points).unwrap_or_else(|| (0..points.len()).collect());
    Ok(null_line_sorted(points, &order, p, g))
}

pub(crate) fn null_line_sorted(points: &[f64], order: &[usize], p: f64, g: &[f64]) -> f64 {
    let mut running = 0.0;
    let mut total = 0.0;
    for w in order.windows(2) {
        running += g[w[0]];
        let gap = points[w[1]] - points[w[0]];
        total += running.abs() * if p == 1.0 { gap } else { gap.powf(p) };
    }
    total
}
