//! Operator-splitting (ADMM) solver for convex quadratic programs
//!
//! ```text
//! minimize ½xᵀPx + qᵀx + offset  s.t.  A_ineq x ≤ b_ineq,  A_eq x = b_eq
//! ```
//!
//! with Ruiz equilibration, periodic penalty adaptation, certificate-based
//! infeasibility detection and a final polish step that solves the KKT system
//! on the detected active set.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::lp::{solve_lp, LinearProgram, LpOptions};
use super::{SolveStatus, Status};
use crate::error::{Result, RompcError};

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    /// Constant added to the reported objective.
    pub offset: f64,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QuadraticProgram {
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        QuadraticProgram {
            p,
            q,
            offset: 0.0,
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x) + self.offset
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.p.shape() != (n, n) || self.a_ineq.ncols() != n || self.a_eq.ncols() != n {
            return Err(RompcError::dims(format!(
                "QP with {n} variables: P is {:?}, A_ineq {:?}, A_eq {:?}",
                self.p.shape(),
                self.a_ineq.shape(),
                self.a_eq.shape()
            )));
        }
        if self.a_ineq.nrows() != self.b_ineq.len() || self.a_eq.nrows() != self.b_eq.len() {
            return Err(RompcError::dims(
                "QP constraint rows do not match right-hand sides",
            ));
        }
        if (&self.p - self.p.transpose()).amax() > 1e-9 * (1.0 + self.p.amax()) {
            return Err(RompcError::invalid("QP cost matrix is not symmetric"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adapt_interval: usize,
    pub polish: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_infeasible: 1e-7,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adapt_interval: 25,
            polish: true,
        }
    }
}

/// Primal and dual starting point.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: DVector<f64>,
    /// Multipliers for the stacked rows [A_ineq; A_eq].
    pub y: Option<DVector<f64>>,
}

/// QP solution: status plus the multipliers of the stacked rows [A_ineq; A_eq].
#[derive(Debug, Clone)]
pub struct QpResult {
    pub status: SolveStatus,
    pub y: Option<DVector<f64>>,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const EQ_RHO_SCALE: f64 = 1e3;

pub fn solve_qp(
    qp: &QuadraticProgram,
    opts: &QpOptions,
    warm: Option<&WarmStart>,
) -> Result<QpResult> {
    qp.validate()?;
    let start = Instant::now();
    let n = qp.num_vars();
    let mi = qp.a_ineq.nrows();
    let me = qp.a_eq.nrows();
    let mc = mi + me;
    let mut a = DMatrix::zeros(mc, n);
    a.rows_mut(0, mi).copy_from(&qp.a_ineq);
    a.rows_mut(mi, me).copy_from(&qp.a_eq);
    let mut l = DVector::from_element(mc, f64::NEG_INFINITY);
    let mut u = DVector::zeros(mc);
    u.rows_mut(0, mi).copy_from(&qp.b_ineq);
    l.rows_mut(mi, me).copy_from(&qp.b_eq);
    u.rows_mut(mi, me).copy_from(&qp.b_eq);

    // rows without coefficients are decided by their bounds alone
    for i in 0..mc {
        if a.row(i).amax() == 0.0 && (l[i] > 0.0 || u[i] < 0.0) {
            let st = SolveStatus::without_point(Status::Infeasible, 0, start.elapsed());
            return Ok(QpResult {
                status: st,
                y: None,
            });
        }
    }

    let sc = Scaling::ruiz(&qp.p, &qp.q, &a);
    let p = sc.scale_p(&qp.p);
    let q = sc.scale_q(&qp.q);
    let a_s = sc.scale_a(&a);
    let l_s = l.component_mul(&sc.e);
    let u_s = u.component_mul(&sc.e);

    let is_eq: Vec<bool> = (0..mc).map(|i| l[i] == u[i]).collect();
    let mut rho_base = opts.rho;
    let rho_vec =
        |base: f64| DVector::from_fn(mc, |i, _| if is_eq[i] { base * EQ_RHO_SCALE } else { base });
    let mut rho = rho_vec(rho_base);

    let factor = |rho: &DVector<f64>| -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let mut k = p.clone();
        for i in 0..n {
            k[(i, i)] += opts.sigma;
        }
        let ar = DMatrix::from_fn(mc, n, |i, j| a_s[(i, j)] * rho[i]);
        k += a_s.transpose() * ar;
        k.cholesky().ok_or_else(|| {
            RompcError::Solver("QP reduced KKT matrix is not positive definite".into())
        })
    };
    let mut chol = factor(&rho)?;

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(mc);
    if let Some(w) = warm {
        if w.x.len() == n {
            x = w.x.component_div(&sc.d);
        }
        if let Some(wy) = &w.y {
            if wy.len() == mc {
                y = wy.component_div(&sc.e) * sc.c;
            }
        }
    }
    let mut z = clip(&(&a_s * &x), &l_s, &u_s);

    let mut iter = 0;
    let mut status = Status::MaxIter;
    while iter < opts.max_iter {
        iter += 1;
        let rhs = &x * opts.sigma - &q + a_s.transpose() * (rho.component_mul(&z) - &y);
        let xt = chol.solve(&rhs);
        let zt = &a_s * &xt;
        let x_next = &xt * opts.alpha + &x * (1.0 - opts.alpha);
        let z_relax = &zt * opts.alpha + &z * (1.0 - opts.alpha);
        let z_next = clip(&(&z_relax + y.component_div(&rho)), &l_s, &u_s);
        let y_next = &y + rho.component_mul(&(&z_relax - &z_next));
        let dy = &y_next - &y;
        x = x_next;
        z = z_next;
        y = y_next;

        // residuals in unscaled units
        let ax = &a_s * &x;
        let px = &p * &x;
        let aty = a_s.transpose() * &y;
        let r_prim = (&ax - &z).component_div(&sc.e).amax();
        let r_dual = (&px + &q + &aty).component_div(&sc.d).amax() / sc.c;
        let prim_scale = ax
            .component_div(&sc.e)
            .amax()
            .max(z.component_div(&sc.e).amax());
        let dual_scale = px
            .component_div(&sc.d)
            .amax()
            .max(aty.component_div(&sc.d).amax())
            .max(q.component_div(&sc.d).amax())
            / sc.c;
        let eps_p = opts.eps_abs + opts.eps_rel * prim_scale;
        let eps_d = opts.eps_abs + opts.eps_rel * dual_scale;
        if r_prim <= eps_p && r_dual <= eps_d {
            status = Status::Optimal;
            break;
        }
        if mc > 0 && primal_infeasible(&a_s, &l_s, &u_s, &dy, &sc, opts.eps_infeasible) {
            status = Status::Infeasible;
            break;
        }
        if opts.adapt_interval > 0 && iter % opts.adapt_interval == 0 && mc > 0 {
            let num = r_prim / prim_scale.max(1e-12);
            let den = r_dual / dual_scale.max(1e-12);
            let ratio = (num / den.max(1e-30)).sqrt();
            let new_base = (rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
            if new_base > 5.0 * rho_base || new_base < 0.2 * rho_base {
                rho_base = new_base;
                rho = rho_vec(rho_base);
                chol = factor(&rho)?;
            }
        }
    }

    if status == Status::Infeasible {
        let st = SolveStatus::without_point(Status::Infeasible, iter, start.elapsed());
        return Ok(QpResult {
            status: st,
            y: None,
        });
    }

    let mut x_out = x.component_mul(&sc.d);
    let mut y_out = y.component_mul(&sc.e) / sc.c;
    if opts.polish && status == Status::Optimal {
        if let Some((xp, yp)) = polish(qp, &a, &l, &u, &x_out, &y_out) {
            x_out = xp;
            y_out = yp;
        }
    }
    if status == Status::MaxIter {
        // distinguish an empty feasible set from slow convergence
        if mc > 0 && !feasible_by_lp(&a, &l, &u) {
            let st = SolveStatus::without_point(Status::Infeasible, iter, start.elapsed());
            return Ok(QpResult {
                status: st,
                y: None,
            });
        }
        if opts.polish {
            if let Some((xp, yp)) = polish(qp, &a, &l, &u, &x_out, &y_out) {
                x_out = xp;
                y_out = yp;
                status = Status::Optimal;
            }
        }
    }
    let objective = qp.objective(&x_out);
    Ok(QpResult {
        status: SolveStatus {
            status,
            objective,
            x: Some(x_out),
            iterations: iter,
            solve_time: start.elapsed(),
        },
        y: Some(y_out),
    })
}

fn clip(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].max(l[i]).min(u[i]))
}

fn primal_infeasible(
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    dy: &DVector<f64>,
    sc: &Scaling,
    eps: f64,
) -> bool {
    let dy_un = dy.component_mul(&sc.e);
    let norm = dy_un.amax();
    if norm <= 1e-30 {
        return false;
    }
    let atdy = (a.transpose() * dy).component_div(&sc.d).amax();
    if atdy > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let d = dy[i];
        if d > 0.0 {
            if !u[i].is_finite() {
                return false;
            }
            support += u[i] * d;
        } else if d < 0.0 {
            if !l[i].is_finite() {
                return false;
            }
            support += l[i] * d;
        }
    }
    support < -eps * norm
}

fn feasible_by_lp(a: &DMatrix<f64>, l: &DVector<f64>, u: &DVector<f64>) -> bool {
    let n = a.ncols();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..a.nrows() {
        if u[i].is_finite() {
            rows.push(a.row(i).transpose());
            rhs.push(u[i]);
        }
        if l[i].is_finite() {
            rows.push(-a.row(i).transpose());
            rhs.push(-l[i]);
        }
    }
    if rows.is_empty() {
        return true;
    }
    let am = DMatrix::from_columns(&rows).transpose();
    let lp = LinearProgram::new(DVector::zeros(n)).with_ineq(am, DVector::from_vec(rhs));
    matches!(solve_lp(&lp, &LpOptions::default()), Ok(s) if s.status == Status::Optimal)
}

/// Solve the equality-constrained KKT system on the active set guessed from
/// the multipliers, with iterative refinement; accept only if the result is
/// feasible and dual feasible.
fn polish(
    qp: &QuadraticProgram,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = x.len();
    let mc = a.nrows();
    let ax = a * x;
    let mut active = Vec::new();
    let mut target = Vec::new();
    for i in 0..mc {
        let scale = 1e-9 * (1.0 + l[i].abs().min(u[i].abs()));
        if l[i] == u[i]
            || y[i] > scale
            || (u[i].is_finite() && ax[i] >= u[i] - 1e-9 * (1.0 + u[i].abs()) && y[i] > 0.0)
        {
            active.push(i);
            target.push(u[i]);
        } else if y[i] < -scale {
            active.push(i);
            target.push(l[i]);
        }
    }
    let na = active.len();
    let delta = 1e-11 * (1.0 + qp.p.amax());
    let dim = n + na;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            k[(n + r, j)] = a[(i, j)];
            k[(j, n + r)] = a[(i, j)];
        }
    }
    let mut kreg = k.clone();
    for i in 0..n {
        kreg[(i, i)] += delta;
    }
    for i in n..dim {
        kreg[(i, i)] -= delta;
    }
    let lu = kreg.lu();
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&qp.q));
    for (r, &t) in target.iter().enumerate() {
        rhs[n + r] = t;
    }
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let res = &rhs - &k * &sol;
        if res.amax() <= 1e-13 * (1.0 + rhs.amax()) {
            break;
        }
        sol += lu.solve(&res)?;
    }
    let xp = sol.rows(0, n).into_owned();
    let mut yp = DVector::zeros(mc);
    for (r, &i) in active.iter().enumerate() {
        yp[i] = sol[n + r];
    }
    if !xp.iter().all(|v| v.is_finite()) {
        return None;
    }
    // primal feasibility and multiplier signs
    let axp = a * &xp;
    for i in 0..mc {
        let tol = 1e-7 * (1.0 + l[i].abs().min(u[i].abs()).min(1e12));
        if axp[i] > u[i] + tol || axp[i] < l[i] - tol {
            return None;
        }
        if l[i] != u[i]
            && ((yp[i] > 1e-9 && target_is_lower(l, u, i, &active, &target))
                || (yp[i] < -1e-9 && !target_is_lower(l, u, i, &active, &target)))
        {
            return None;
        }
    }
    Some((xp, yp))
}

fn target_is_lower(
    l: &DVector<f64>,
    _u: &DVector<f64>,
    i: usize,
    active: &[usize],
    target: &[f64],
) -> bool {
    active
        .iter()
        .position(|&k| k == i)
        .map(|r| target[r] == l[i])
        .unwrap_or(false)
}

/// Diagonal equilibration: P̄ = c·DPD, q̄ = c·Dq, Ā = EAD.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

impl Scaling {
    fn ruiz(p: &DMatrix<f64>, q: &DVector<f64>, a: &DMatrix<f64>) -> Self {
        let n = p.nrows();
        let mc = a.nrows();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(mc, 1.0);
        let mut ps = p.clone();
        let mut as_ = a.clone();
        for _ in 0..10 {
            let mut dd = DVector::from_element(n, 1.0);
            for j in 0..n {
                let mut mx = ps.column(j).amax();
                if mc > 0 {
                    mx = mx.max(as_.column(j).amax());
                }
                dd[j] = if mx > 1e-4 { 1.0 / mx.sqrt() } else { 1.0 };
            }
            let mut ee = DVector::from_element(mc, 1.0);
            for i in 0..mc {
                let mx = as_.row(i).amax();
                ee[i] = if mx > 1e-4 { 1.0 / mx.sqrt() } else { 1.0 };
            }
            for j in 0..n {
                for i in 0..n {
                    ps[(i, j)] *= dd[i] * dd[j];
                }
                for i in 0..mc {
                    as_[(i, j)] *= ee[i] * dd[j];
                }
            }
            d.component_mul_assign(&dd);
            e.component_mul_assign(&ee);
        }
        let qs = q.component_mul(&d);
        let mean_col = if n > 0 {
            (0..n).map(|j| ps.column(j).amax()).sum::<f64>() / n as f64
        } else {
            1.0
        };
        let c_scale = mean_col.max(qs.amax());
        let c = if c_scale > 1e-4 {
            (1.0 / c_scale).min(1e4)
        } else {
            1.0
        };
        Scaling { d, e, c }
    }

    fn scale_p(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| {
            p[(i, j)] * self.d[i] * self.d[j] * self.c
        })
    }

    fn scale_q(&self, q: &DVector<f64>) -> DVector<f64> {
        q.component_mul(&self.d) * self.c
    }

    fn scale_a(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
            a[(i, j)] * self.e[i] * self.d[j]
        })
    }
}
