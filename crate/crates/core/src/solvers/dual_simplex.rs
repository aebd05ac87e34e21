//! Warm-started bounded dual simplex for `maximize cᵀx s.t. Ax ≤ b, l ≤ x ≤ u`
//! with finite bounds, where rows are appended between solves.
//!
//! Every variable starts nonbasic at the bound its cost prefers, which is dual
//! feasible for any objective, and appended rows enter with their slack basic,
//! so no phase one is ever needed.

use nalgebra::{DMatrix, DVector};

use super::Status;
use crate::error::{Result, RompcError};

const REFACTOR_EVERY: usize = 200;
const DEGENERATE_LIMIT: usize = 1000;

pub struct DualSimplex {
    n: usize,
    a: DMatrix<f64>,
    b: Vec<f64>,
    /// Minimization cost −c/‖c‖_∞ for structurals, zero for slacks.
    cost: Vec<f64>,
    cost_scale: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    /// Reduced costs (minimization form), zero on basic variables.
    d: Vec<f64>,
    basis: Vec<usize>,
    /// Basis row of each variable, `usize::MAX` if nonbasic.
    pos: Vec<usize>,
    binv: DMatrix<f64>,
    pivots_since_refactor: usize,
    degenerate_run: usize,
    iterations: usize,
    tol: f64,
}

const NONBASIC: usize = usize::MAX;

impl DualSimplex {
    /// Bounds must be finite with `lower ≤ upper`.
    pub fn new(
        c: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        tol: f64,
    ) -> Result<Self> {
        let n = c.len();
        if lower.len() != n || upper.len() != n {
            return Err(RompcError::dims(
                "bound vectors must match the objective length",
            ));
        }
        for j in 0..n {
            if !(lower[j].is_finite() && upper[j].is_finite() && lower[j] <= upper[j])
                || !c[j].is_finite()
            {
                return Err(RompcError::invalid(format!(
                    "variable {j} needs finite bounds l ≤ u and a finite cost"
                )));
            }
        }
        let cost_scale = if c.amax() > 0.0 { c.amax() } else { 1.0 };
        let cost: Vec<f64> = c.iter().map(|v| -v / cost_scale).collect();
        let x = (0..n)
            .map(|j| if cost[j] >= 0.0 { lower[j] } else { upper[j] })
            .collect();
        Ok(DualSimplex {
            n,
            a: DMatrix::zeros(0, n),
            b: Vec::new(),
            d: cost.clone(),
            cost,
            cost_scale,
            lo: lower.iter().copied().collect(),
            hi: upper.iter().copied().collect(),
            x,
            basis: Vec::new(),
            pos: vec![NONBASIC; n],
            binv: DMatrix::zeros(0, 0),
            pivots_since_refactor: 0,
            degenerate_run: 0,
            iterations: 0,
            tol,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Append rows `aᵢᵀx ≤ bᵢ`; the current basis stays dual feasible.
    pub fn add_rows(&mut self, rows: &[(DVector<f64>, f64)]) -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let (n, m, k) = (self.n, self.b.len(), rows.len());
        for (r, v) in rows {
            if r.len() != n || !r.iter().all(|e| e.is_finite()) || !v.is_finite() {
                return Err(RompcError::invalid(
                    "appended LP row must be finite with one entry per variable",
                ));
            }
        }
        let mut a = DMatrix::zeros(m + k, n);
        a.rows_mut(0, m).copy_from(&self.a);
        for (i, (r, _)) in rows.iter().enumerate() {
            a.row_mut(m + i).copy_from(&r.transpose());
        }
        self.a = a;

        // B' = [[B, 0], [a_B, I]] ⇒ B'⁻¹ = [[B⁻¹, 0], [−a_B B⁻¹, I]]
        let a_b = DMatrix::from_fn(k, m, |i, p| {
            let j = self.basis[p];
            if j < n {
                rows[i].0[j]
            } else {
                0.0
            }
        });
        let mut binv = DMatrix::zeros(m + k, m + k);
        binv.view_mut((0, 0), (m, m)).copy_from(&self.binv);
        binv.view_mut((m, 0), (k, m))
            .copy_from(&(-(a_b * &self.binv)));
        for i in 0..k {
            binv[(m + i, m + i)] = 1.0;
        }
        self.binv = binv;

        // existing slacks keep their indices n..n+m; the new ones follow
        for (i, (r, v)) in rows.iter().enumerate() {
            let slack = n + m + i;
            let value = v - r.dot(&DVector::from_column_slice(&self.x[..n]));
            self.b.push(*v);
            self.cost.push(0.0);
            self.d.push(0.0);
            self.lo.push(0.0);
            self.hi.push(f64::INFINITY);
            self.x.push(value);
            self.pos.push(m + i);
            self.basis.push(slack);
        }
        Ok(())
    }

    pub fn x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x[..self.n])
    }

    /// Objective cᵀx at the current point.
    pub fn objective(&self) -> f64 {
        -self.cost_scale * (0..self.n).map(|j| self.cost[j] * self.x[j]).sum::<f64>()
    }

    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.n {
            self.a.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(self.b.len());
            e[j - self.n] = 1.0;
            e
        }
    }

    fn feas_tol(&self, v: f64) -> f64 {
        self.tol * (1.0 + v.abs())
    }

    /// Most infeasible basic row and the bound it must move to.
    fn leaving(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for (r, &j) in self.basis.iter().enumerate() {
            let (v, lo, hi) = (self.x[j], self.lo[j], self.hi[j]);
            let (viol, target) = if v < lo - self.feas_tol(lo) {
                (lo - v, lo)
            } else if v > hi + self.feas_tol(hi) {
                (v - hi, hi)
            } else {
                continue;
            };
            let better = match best {
                None => true,
                Some((br, bv, _)) => {
                    if bland {
                        j < self.basis[br]
                    } else {
                        viol > bv
                    }
                }
            };
            if better {
                best = Some((r, viol, target));
            }
        }
        best.map(|(r, _, t)| (r, t))
    }

    pub fn solve(&mut self, max_iter: usize) -> Status {
        loop {
            if self.iterations >= max_iter {
                return Status::MaxIter;
            }
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                self.refactor();
            }
            let bland = self.degenerate_run >= DEGENERATE_LIMIT;
            let Some((r, target)) = self.leaving(bland) else {
                if self.pivots_since_refactor > 0 {
                    self.refactor();
                    if self.leaving(true).is_some() {
                        continue;
                    }
                }
                return Status::Optimal;
            };
            let leave = self.basis[r];
            let increase = target <= self.lo[leave];
            let rho = self.binv.row(r).transpose();
            let alpha_s = self.a.tr_mul(&rho);
            let alpha = |j: usize| {
                if j < self.n {
                    alpha_s[j]
                } else {
                    rho[j - self.n]
                }
            };

            let amax = alpha_s.amax().max(rho.amax()).max(1.0);
            let ptol = 1e-9 * amax;
            let dtol = self.tol;
            // entering candidates move x_leave towards its violated bound
            let eligible = |j: usize| -> Option<f64> {
                if self.pos[j] != NONBASIC || self.lo[j] == self.hi[j] {
                    return None;
                }
                let a = alpha(j);
                if a.abs() <= ptol {
                    return None;
                }
                let at_lo = self.x[j] <= self.lo[j];
                // raising x_j changes x_leave by −a
                let ok = if increase {
                    (at_lo && a < 0.0) || (!at_lo && a > 0.0)
                } else {
                    (at_lo && a > 0.0) || (!at_lo && a < 0.0)
                };
                ok.then_some(a)
            };
            let total = self.x.len();
            let mut limit = f64::INFINITY;
            for j in 0..total {
                if let Some(a) = eligible(j) {
                    limit = limit.min((self.d[j].abs() + dtol) / a.abs());
                }
            }
            if !limit.is_finite() {
                return Status::Infeasible;
            }
            let mut choice: Option<(usize, f64)> = None;
            for j in 0..total {
                if let Some(a) = eligible(j) {
                    if self.d[j].abs() / a.abs() > limit {
                        continue;
                    }
                    let better = match choice {
                        None => true,
                        Some((cj, ca)) => {
                            if bland {
                                j < cj
                            } else {
                                a.abs() > ca.abs()
                            }
                        }
                    };
                    if better {
                        choice = Some((j, a));
                    }
                }
            }
            let (q, a_rq) = choice.expect("a candidate lies within the ratio limit");
            self.iterations += 1;

            // a reduced cost on the wrong side of zero (within tolerance) takes no dual step
            let d_q = if self.x[q] <= self.lo[q] {
                self.d[q].max(0.0)
            } else {
                self.d[q].min(0.0)
            };
            let theta_d = d_q / a_rq;
            if theta_d.abs() <= 1e-12 {
                self.degenerate_run += 1;
            } else {
                self.degenerate_run = 0;
            }
            for j in 0..total {
                if self.pos[j] == NONBASIC {
                    self.d[j] -= theta_d * alpha(j);
                }
            }
            self.d[q] = 0.0;
            self.d[leave] = -theta_d;

            let alpha_q = &self.binv * self.column(q);
            let theta_p = (self.x[leave] - target) / a_rq;
            for (i, &j) in self.basis.iter().enumerate() {
                self.x[j] -= theta_p * alpha_q[i];
            }
            self.x[q] += theta_p;
            self.x[leave] = target;
            self.pos[leave] = NONBASIC;
            self.basis[r] = q;
            self.pos[q] = r;

            let piv = alpha_q[r];
            let row: DVector<f64> = self.binv.row(r).transpose() / piv;
            let mut u = alpha_q;
            u[r] -= 1.0;
            self.binv.ger(-1.0, &u, &row, 1.0);
            self.pivots_since_refactor += 1;
        }
    }

    fn refactor(&mut self) {
        let m = self.b.len();
        if m == 0 {
            self.pivots_since_refactor = 0;
            return;
        }
        let mut bmat = DMatrix::zeros(m, m);
        for (i, &j) in self.basis.iter().enumerate() {
            bmat.set_column(i, &self.column(j));
        }
        if let Some(inv) = bmat.lu().try_inverse() {
            self.binv = inv;
        }
        let total = self.x.len();
        let dtol = self.tol;
        // duals, then restore dual feasibility of boxed nonbasics by flipping
        let cb = DVector::from_iterator(m, self.basis.iter().map(|&j| self.cost[j]));
        let pi = self.binv.tr_mul(&cb);
        let api = self.a.tr_mul(&pi);
        for j in 0..total {
            if self.pos[j] != NONBASIC {
                self.d[j] = 0.0;
                continue;
            }
            self.d[j] = if j < self.n {
                self.cost[j] - api[j]
            } else {
                -pi[j - self.n]
            };
            let at_lo = self.x[j] <= self.lo[j];
            let wrong = if at_lo { -self.d[j] } else { self.d[j] };
            if wrong > dtol && j < self.n && self.lo[j] < self.hi[j] {
                self.x[j] = if at_lo { self.hi[j] } else { self.lo[j] };
            } else if wrong > 0.0 {
                self.d[j] = 0.0;
            }
        }
        let mut rhs = DVector::from_column_slice(&self.b);
        for j in 0..total {
            if self.pos[j] == NONBASIC && self.x[j] != 0.0 {
                if j < self.n {
                    rhs.axpy(-self.x[j], &self.a.column(j), 1.0);
                } else {
                    rhs[j - self.n] -= self.x[j];
                }
            }
        }
        let xb = &self.binv * rhs;
        for (i, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[i];
        }
        self.pivots_since_refactor = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{solve_lp, LinearProgram, LpOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_only_is_bang_bang() {
        let c = DVector::from_vec(vec![1.0, -2.0, 0.0]);
        let mut lp = DualSimplex::new(
            &c,
            &DVector::from_element(3, -1.0),
            &DVector::from_element(3, 2.0),
            1e-9,
        )
        .unwrap();
        assert_eq!(lp.solve(100), Status::Optimal);
        assert_eq!(lp.objective(), 4.0);
    }

    #[test]
    fn infeasible_rows_detected() {
        let c = DVector::from_vec(vec![1.0]);
        let mut lp = DualSimplex::new(
            &c,
            &DVector::from_element(1, 0.0),
            &DVector::from_element(1, 1.0),
            1e-9,
        )
        .unwrap();
        lp.add_rows(&[(DVector::from_vec(vec![-1.0]), -2.0)])
            .unwrap();
        assert_eq!(lp.solve(100), Status::Infeasible);
    }

    #[test]
    fn incremental_rows_match_full_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let n = rng.random_range(2..12);
            let rows = rng.random_range(1..25);
            let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let lo = DVector::from_fn(n, |_, _| rng.random_range(-2.0..0.0));
            let hi = DVector::from_fn(n, |_, _| rng.random_range(0.0..2.0));
            let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(rows, |_, _| rng.random_range(0.0..1.0));
            let full = solve_lp(
                &LinearProgram::new(c.clone())
                    .with_ineq(a.clone(), b.clone())
                    .with_bounds(lo.clone(), hi.clone()),
                &LpOptions::default(),
            )
            .unwrap();
            let mut inc = DualSimplex::new(&c, &lo, &hi, 1e-9).unwrap();
            // rows arrive in three batches with solves in between
            let mut start = 0;
            for end in [rows / 3, 2 * rows / 3, rows] {
                let batch: Vec<_> = (start..end).map(|i| (a.row(i).transpose(), b[i])).collect();
                inc.add_rows(&batch).unwrap();
                assert_eq!(inc.solve(10_000), Status::Optimal);
                start = end;
            }
            assert!((inc.objective() - full.objective).abs() < 1e-8 * (1.0 + full.objective.abs()));
            let x = inc.x();
            assert!((&a * &x - &b).max() < 1e-8);
            assert!((0..n).all(|j| x[j] >= lo[j] - 1e-9 && x[j] <= hi[j] + 1e-9));
        }
    }
}
