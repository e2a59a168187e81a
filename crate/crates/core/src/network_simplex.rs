//! Network simplex on the complete bipartite transport graph (the classical
//! u-v transportation simplex). Bases are spanning trees over the `2N` row and
//! column nodes with exactly `2N - 1` cells; degenerate zero-flow cells are kept
//! in the tree, so zero-mass atoms need no special casing.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct FlowSolution {
    pub plan: Vec<f64>,
    pub cost: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations: usize,
}

struct Basis {
    n: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
}

impl Basis {
    /// Staircase basis: every step advances exactly one of the two indices.
    fn northwest(r: &[f64], s: &[f64]) -> Self {
        let n = r.len();
        let mut ra = r.to_vec();
        let mut sb = s.to_vec();
        let mut cells = Vec::with_capacity(2 * n - 1);
        let mut flow = Vec::with_capacity(2 * n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let f = ra[i].min(sb[j]).max(0.0);
            cells.push((i, j));
            flow.push(f);
            ra[i] -= f;
            sb[j] -= f;
            if i == n - 1 && j == n - 1 {
                break;
            }
            if i == n - 1 {
                j += 1;
            } else if j == n - 1 || ra[i] <= sb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Basis { n, cells, flow }
    }

    /// Tree adjacency over nodes `0..n` (rows) and `n..2n` (columns): (neighbor, cell).
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); 2 * self.n];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.n + j, k));
            adj[self.n + j].push((i, k));
        }
        adj
    }

    fn potentials(&self, cost: &[f64], adj: &[Vec<(usize, usize)>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let mut pot = vec![f64::NAN; 2 * n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(x) = queue.pop_front() {
            for &(y, k) in &adj[x] {
                if pot[y].is_nan() {
                    let (i, j) = self.cells[k];
                    pot[y] = cost[i * n + j] - pot[x];
                    queue.push_back(y);
                }
            }
        }
        if pot.iter().any(|p| p.is_nan()) {
            return Err(Error::Internal("transport basis is not a spanning tree".into()));
        }
        let v = pot.split_off(n);
        Ok((pot, v))
    }

    /// Tree path from node `from` to node `to`, as cell indices in order.
    fn path(&self, adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> Vec<usize> {
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; 2 * self.n];
        let mut seen = vec![false; 2 * self.n];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(x) = queue.pop_front() {
            if x == to {
                break;
            }
            for &(y, k) in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = Some((x, k));
                    queue.push_back(y);
                }
            }
        }
        let mut cells = Vec::new();
        let mut x = to;
        while let Some((p, k)) = parent[x] {
            cells.push(k);
            x = p;
        }
        cells.reverse();
        cells
    }

    /// Recomputes flows from the tree and the marginals by peeling leaves.
    fn refresh_flows(&mut self, r: &[f64], s: &[f64]) -> Result<()> {
        let n = self.n;
        let mut supply: Vec<f64> = r.iter().chain(s).copied().collect();
        let adj = self.adjacency();
        let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut done = vec![false; self.cells.len()];
        let mut leaves: Vec<usize> = (0..2 * n).filter(|&x| degree[x] == 1).collect();
        while let Some(x) = leaves.pop() {
            let Some(&(y, k)) = adj[x].iter().find(|&&(_, k)| !done[k]) else {
                continue;
            };
            done[k] = true;
            let f = supply[x];
            self.flow[k] = f;
            supply[y] -= f;
            degree[x] -= 1;
            degree[y] -= 1;
            if degree[y] == 1 {
                leaves.push(y);
            }
        }
        let scale = r.iter().chain(s).fold(1.0f64, |a, b| a.max(b.abs()));
        for f in &mut self.flow {
            if *f < 0.0 {
                if *f < -1e-12 * scale {
                    return Err(Error::Internal(format!("negative basic flow {f:e}")));
                }
                *f = 0.0;
            }
        }
        Ok(())
    }
}

/// Solves `min <c, pi>` over couplings of `r` and `s` (equal total mass).
pub(crate) fn solve(r: &[f64], s: &[f64], cost: &[f64]) -> Result<FlowSolution> {
    let n = r.len();
    debug_assert_eq!(s.len(), n);
    debug_assert_eq!(cost.len(), n * n);
    if n == 1 {
        return Ok(FlowSolution {
            plan: vec![r[0]],
            cost: cost[0] * r[0],
            u: vec![0.0],
            v: vec![cost[0]],
            iterations: 0,
        });
    }
    let cmax = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let opt_tol = 1e-12 * cmax.max(1e-300);
    let mut basis = Basis::northwest(r, s);
    let mut in_basis = vec![false; n * n];
    for &(i, j) in &basis.cells {
        in_basis[i * n + j] = true;
    }
    let max_iter = 200 * n * n + 1000;
    let mut degenerate_run = 0usize;
    for iteration in 0..max_iter {
        let adj = basis.adjacency();
        let (u, v) = basis.potentials(cost, &adj)?;
        let mut entering = None;
        let mut best = -opt_tol;
        'scan: for i in 0..n {
            for j in 0..n {
                if in_basis[i * n + j] {
                    continue;
                }
                let rc = cost[i * n + j] - u[i] - v[j];
                if rc < best {
                    entering = Some((i, j));
                    best = rc;
                    if degenerate_run > 2 * n {
                        // Bland-style: take the first improving cell.
                        break 'scan;
                    }
                }
            }
        }
        let Some((ei, ej)) = entering else {
            basis.refresh_flows(r, s)?;
            let adj = basis.adjacency();
            let (u, v) = basis.potentials(cost, &adj)?;
            let mut plan = vec![0.0; n * n];
            for (&(i, j), &f) in basis.cells.iter().zip(&basis.flow) {
                plan[i * n + j] = f;
            }
            let total = plan.iter().zip(cost).map(|(p, c)| p * c).sum();
            return Ok(FlowSolution {
                plan,
                cost: total,
                u,
                v,
                iterations: iteration,
            });
        };
        // Cycle: entering cell (+) then the tree path from row ei to column ej,
        // alternating (-, +, -, ...).
        let path = basis.path(&adj, ei, n + ej);
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for &k in path.iter().step_by(2) {
            let f = basis.flow[k];
            if f < theta || (f == theta && basis.cells[k] < basis.cells[leave]) {
                theta = f;
                leave = k;
            }
        }
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis.flow[k] -= theta;
            } else {
                basis.flow[k] += theta;
            }
        }
        degenerate_run = if theta <= 0.0 { degenerate_run + 1 } else { 0 };
        let (li, lj) = basis.cells[leave];
        in_basis[li * n + lj] = false;
        in_basis[ei * n + ej] = true;
        basis.cells[leave] = (ei, ej);
        basis.flow[leave] = theta;
    }
    Err(Error::Convergence {
        solver: "transport simplex",
        iterations: max_iter,
        residual: f64::NAN,
    })
}
