//! Dense two-phase primal simplex for small standard-form LPs,
//! `min c^T x  s.t.  A x = b, x >= 0`.
//!
//! Used for the dual-face maximizations whose equality structure does not fit
//! the transportation solver. Problems here have a few dozen rows and at most
//! a few thousand columns, so a dense tableau is adequate.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone)]
pub struct StandardLp {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl StandardLp {
    /// Empty problem with `rows` equality constraints and no columns.
    pub fn new(rows: usize, b: Vec<f64>) -> Self {
        assert_eq!(b.len(), rows);
        StandardLp {
            rows,
            cols: 0,
            a: Vec::new(),
            b,
            c: Vec::new(),
        }
    }

    /// Appends a nonnegative column given as sparse `(row, coefficient)` pairs.
    pub fn push_column(&mut self, cost: f64, entries: &[(usize, f64)]) -> usize {
        let mut col = vec![0.0; self.rows];
        for &(i, v) in entries {
            col[i] += v;
        }
        self.a.extend_from_slice(&col);
        self.c.push(cost);
        self.cols += 1;
        self.cols - 1
    }

    /// Appends a free variable as the difference of two nonnegative columns.
    pub fn push_free_column(&mut self, cost: f64, entries: &[(usize, f64)]) -> (usize, usize) {
        let plus = self.push_column(cost, entries);
        let neg: Vec<(usize, f64)> = entries.iter().map(|&(i, v)| (i, -v)).collect();
        let minus = self.push_column(-cost, &neg);
        (plus, minus)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Tableau::build(self).run()
    }
}

struct Tableau {
    m: usize,
    // structural columns followed by one artificial per row
    n: usize,
    width: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    active_row: Vec<bool>,
    cost: Vec<f64>,
    structural: usize,
    scale: f64,
}

impl Tableau {
    fn build(lp: &StandardLp) -> Self {
        let m = lp.rows;
        let s = lp.cols;
        let n = s + m;
        let width = n + 1;
        let mut t = vec![0.0; m * width];
        for i in 0..m {
            let sign = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..s {
                t[i * width + j] = sign * lp.a[j * m + i];
            }
            t[i * width + s + i] = 1.0;
            t[i * width + n] = sign * lp.b[i];
        }
        let scale = lp
            .a
            .iter()
            .chain(&lp.b)
            .fold(1.0f64, |acc, v| acc.max(v.abs()));
        Tableau {
            m,
            n,
            width,
            t,
            basis: (s..n).collect(),
            active_row: vec![true; m],
            cost: lp.c.clone(),
            structural: s,
            scale,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.t[row * w + col];
        for j in 0..w {
            self.t[row * w + j] /= p;
        }
        let (before, rest) = self.t.split_at_mut(row * w);
        let (prow, after) = rest.split_at_mut(w);
        for other in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = other[col];
            if f != 0.0 {
                for (o, pv) in other.iter_mut().zip(prow.iter()) {
                    *o -= f * pv;
                }
                other[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Reduced costs for objective `obj` (indexed by column) over allowed columns.
    fn reduced_costs(&self, obj: &dyn Fn(usize) -> f64, allowed: usize) -> Vec<f64> {
        let mut d: Vec<f64> = (0..allowed).map(obj).collect();
        for i in 0..self.m {
            if !self.active_row[i] {
                continue;
            }
            let cb = obj(self.basis[i]);
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj -= cb * self.at(i, j);
                }
            }
        }
        d
    }

    /// Runs simplex iterations on objective `obj` restricted to columns `< allowed`.
    /// Returns false when the problem is unbounded.
    fn optimize(&mut self, obj: &dyn Fn(usize) -> f64, allowed: usize) -> Result<bool> {
        let cmax = (0..allowed).fold(1.0f64, |acc, j| acc.max(obj(j).abs()));
        let opt_tol = 1e-10 * cmax;
        let max_iter = 50 * (self.m + allowed) + 1000;
        let mut degenerate = 0usize;
        let mut d = self.reduced_costs(obj, allowed);
        for _ in 0..max_iter {
            let entering = if degenerate >= DEGENERATE_SWITCH {
                (0..allowed).find(|&j| d[j] < -opt_tol)
            } else {
                (0..allowed)
                    .filter(|&j| d[j] < -opt_tol)
                    .min_by(|&a, &b| d[a].total_cmp(&d[b]))
            };
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if !self.active_row[i] {
                    continue;
                }
                let a = self.at(i, col);
                if a > PIVOT_TOL {
                    let ratio = self.at(i, self.n) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14 * self.scale
                                || (ratio <= br + 1e-14 * self.scale
                                    && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((row, ratio)) = leave else {
                return Ok(false);
            };
            if ratio <= 1e-14 * self.scale {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(row, col);
            for v in self.t.iter_mut().skip(self.n).step_by(self.width) {
                if *v < 0.0 && *v > -1e-13 * self.scale {
                    *v = 0.0;
                }
            }
            let dc = d[col];
            for (j, dj) in d.iter_mut().enumerate() {
                *dj -= dc * self.at(row, j);
            }
            d[col] = 0.0;
        }
        Err(Error::Internal(format!(
            "simplex exceeded {max_iter} iterations on a {}x{allowed} problem",
            self.m
        )))
    }

    fn run(mut self) -> Result<LpOutcome> {
        let s = self.structural;
        let n = self.n;
        // Phase 1: minimize the sum of artificials.
        let phase1 = move |j: usize| if j >= s { 1.0 } else { 0.0 };
        self.optimize(&phase1, n)?;
        let infeas: f64 = (0..self.m)
            .filter(|&i| self.basis[i] >= s)
            .map(|i| self.at(i, n))
            .sum();
        if infeas > 1e-9 * self.scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        for i in 0..self.m {
            if self.basis[i] < s {
                continue;
            }
            let col = (0..s)
                .filter(|&j| self.at(i, j).abs() > 1e-9)
                .max_by(|&a, &b| self.at(i, a).abs().total_cmp(&self.at(i, b).abs()));
            match col {
                Some(j) => self.pivot(i, j),
                None => self.active_row[i] = false,
            }
        }
        let cost = std::mem::take(&mut self.cost);
        let phase2 = |j: usize| cost[j];
        if !self.optimize(&phase2, s)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![0.0; s];
        for i in 0..self.m {
            if self.active_row[i] && self.basis[i] < s {
                x[self.basis[i]] = self.at(i, n).max(0.0);
            }
        }
        let value = x.iter().zip(&cost).map(|(xi, ci)| xi * ci).sum();
        Ok(LpOutcome::Optimal { value, x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(o: LpOutcome) -> f64 {
        match o {
            LpOutcome::Optimal { value, .. } => value,
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn small_transport() {
        // min x1 + 2 x2 + 3 x3  s.t. x1 + x2 + x3 = 1, x2 + x3 = 0.5
        let mut lp = StandardLp::new(2, vec![1.0, 0.5]);
        lp.push_column(1.0, &[(0, 1.0)]);
        lp.push_column(2.0, &[(0, 1.0), (1, 1.0)]);
        lp.push_column(3.0, &[(0, 1.0), (1, 1.0)]);
        assert!((value(lp.solve().unwrap()) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = StandardLp::new(1, vec![-1.0]);
        lp.push_column(1.0, &[(0, 1.0)]);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Infeasible);

        let mut lp = StandardLp::new(1, vec![1.0]);
        lp.push_column(-1.0, &[(0, 1.0)]);
        lp.push_column(-1.0, &[(0, -1.0)]);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn free_columns_and_redundant_rows() {
        // min |y| style: y free, y = -2 ; duplicate row
        let mut lp = StandardLp::new(2, vec![-2.0, -2.0]);
        lp.push_free_column(3.0, &[(0, 1.0), (1, 1.0)]);
        assert!((value(lp.solve().unwrap()) + 6.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Classic degenerate instance (Beale-like) written in standard form.
        let mut lp = StandardLp::new(3, vec![0.0, 0.0, 1.0]);
        lp.push_column(-0.75, &[(0, 0.25), (1, 0.5)]);
        lp.push_column(150.0, &[(0, -60.0), (1, -90.0)]);
        lp.push_column(-0.02, &[(0, -0.04), (1, -0.02), (2, 1.0)]);
        lp.push_column(6.0, &[(0, 9.0), (1, 3.0)]);
        for i in 0..3 {
            lp.push_column(0.0, &[(i, 1.0)]);
        }
        assert!((value(lp.solve().unwrap()) + 0.05).abs() < 1e-9);
    }
}
