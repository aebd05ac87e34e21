//! Reduced-order optimal control problem: terminal ingredients, condensed QP
//! and warm-started solves.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RompcError};
use crate::geometry::{support_max, Polytope, Support};
use crate::linalg;
use crate::model::StateSpaceModel;
use crate::solvers::{solve_qp, QpOptions, QuadraticProgram, SolveStatus, Status, WarmStart};

/// Iteration cap of the invariant-set recursion.
pub const MPI_MAX_ITER: usize = 500;
const REDUNDANCY_TOL: f64 = 1e-9;

/// Steady-state pair the OCP regulates to.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

impl Target {
    pub fn origin(n: usize, m: usize) -> Self {
        Target {
            x: DVector::zeros(n),
            u: DVector::zeros(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerminalConstraint {
    /// x̄_N ∈ X_f.
    Set(Polytope),
    /// x̄_N = x̄_∞.
    Equality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalIngredients {
    pub p: DMatrix<f64>,
    pub k_f: DMatrix<f64>,
    pub x_f: Polytope,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub zbar: Polytope,
    pub ubar: Polytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Terminal LQR gain, used to extend shifted warm starts.
    pub k_f: DMatrix<f64>,
    pub terminal: TerminalConstraint,
    pub horizon: usize,
    pub target: Target,
}

impl OcpSpec {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        if self.a.shape() != (n, n) || self.b.nrows() != n || self.h.ncols() != n {
            return Err(RompcError::dims("OCP model matrices are inconsistent"));
        }
        if self.zbar.dim() != self.h.nrows() || self.ubar.dim() != m {
            return Err(RompcError::dims(
                "tightened sets do not match the model outputs and inputs",
            ));
        }
        if self.q.shape() != (n, n)
            || self.p.shape() != (n, n)
            || self.r.shape() != (m, m)
            || self.k_f.shape() != (m, n)
        {
            return Err(RompcError::dims(
                "OCP weights do not match the model dimensions",
            ));
        }
        if self.target.x.len() != n || self.target.u.len() != m {
            return Err(RompcError::dims(
                "target does not match the model dimensions",
            ));
        }
        if let TerminalConstraint::Set(x_f) = &self.terminal {
            if x_f.dim() != n {
                return Err(RompcError::dims(
                    "terminal set dimension differs from the state dimension",
                ));
            }
        }
        if self.horizon == 0 {
            return Err(RompcError::invalid("horizon must be at least 1"));
        }
        for (name, w) in [("Q", &self.q), ("R", &self.r), ("P", &self.p)] {
            if !linalg::is_positive_definite(&linalg::symmetrize(w)) {
                return Err(RompcError::NotPositiveDefinite(format!(
                    "{name} must be positive definite"
                )));
            }
        }
        Ok(())
    }
}

/// Q itself when positive definite, else Q + γI.
pub fn regularize_weight(q: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let q = linalg::symmetrize(q);
    if linalg::is_positive_definite(&q) {
        q
    } else {
        let n = q.nrows();
        q + DMatrix::identity(n, n) * gamma
    }
}

/// Terminal cost P and gain K_f from the DARE, and the maximal positively
/// invariant set of x⁺ − x̄_∞ = (A + BK_f)(x − x̄_∞) inside the tightened
/// constraints.
pub fn terminal_ingredients(
    rom: &StateSpaceModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    zbar: &Polytope,
    ubar: &Polytope,
    target: &Target,
) -> Result<TerminalIngredients> {
    let (n, m) = (rom.n(), rom.m());
    if zbar.dim() != rom.o() || ubar.dim() != m || target.x.len() != n || target.u.len() != m {
        return Err(RompcError::dims(
            "terminal ingredients: sets or target do not match the ROM",
        ));
    }
    let p = linalg::symmetrize(&linalg::solve_dare(&rom.a, &rom.b, q, r)?);
    let k_f = linalg::dare_gain(&rom.a, &rom.b, r, &p)?;
    let (x_f, iterations) =
        max_invariant_set(&(&rom.a + &rom.b * &k_f), &rom.h, &k_f, zbar, ubar, target)?;
    Ok(TerminalIngredients {
        p,
        k_f,
        x_f,
        iterations,
    })
}

/// Backward recursion O_{k+1} = O_k ∩ {x | G A_Kᵏ⁺¹ δx ≤ g}, adding only rows
/// that are not already implied.
pub fn max_invariant_set(
    a_k: &DMatrix<f64>,
    h: &DMatrix<f64>,
    k_f: &DMatrix<f64>,
    zbar: &Polytope,
    ubar: &Polytope,
    target: &Target,
) -> Result<(Polytope, usize)> {
    let n = a_k.nrows();
    if zbar.is_empty()? || ubar.is_empty()? {
        return Err(RompcError::EmptySet(
            "tightened constraint set is empty; the error bounds are too large".into(),
        ));
    }
    let z_inf = h * &target.x;
    // δx coordinates: G δx ≤ g
    let mut g_mat = DMatrix::zeros(zbar.num_rows() + ubar.num_rows(), n);
    g_mat.rows_mut(0, zbar.num_rows()).copy_from(&(&zbar.h * h));
    g_mat
        .rows_mut(zbar.num_rows(), ubar.num_rows())
        .copy_from(&(&ubar.h * k_f));
    let mut g = DVector::zeros(g_mat.nrows());
    g.rows_mut(0, zbar.num_rows())
        .copy_from(&(&zbar.b - &zbar.h * &z_inf));
    g.rows_mut(zbar.num_rows(), ubar.num_rows())
        .copy_from(&(&ubar.b - &ubar.h * &target.u));
    if let Some(i) = g.iter().position(|&v| v < -1e-12) {
        return Err(RompcError::Assumption(format!(
            "target violates tightened constraint row {i} by {:.3e}",
            -g[i]
        )));
    }

    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..g_mat.nrows() {
        if g_mat.row(i).amax() > 0.0 {
            rows.push(g_mat.row(i).transpose());
            rhs.push(g[i]);
        }
    }
    let mut power = g_mat.clone();
    for it in 1..=MPI_MAX_ITER {
        power = &power * a_k;
        let current = Polytope::new(
            DMatrix::from_columns(&rows).transpose(),
            DVector::from_column_slice(&rhs),
        )?;
        let mut added = 0;
        for i in 0..power.nrows() {
            let row = power.row(i).transpose();
            if row.amax() == 0.0 {
                continue;
            }
            let redundant = match support_max(&row, &current)? {
                Support::Bounded(v) => v <= g[i] + REDUNDANCY_TOL * (1.0 + g[i].abs()),
                Support::Unbounded => false,
            };
            if !redundant {
                rows.push(row);
                rhs.push(g[i]);
                added += 1;
            }
        }
        if added == 0 {
            debug!(
                "invariant set converged after {it} steps with {} rows",
                rows.len()
            );
            let hm = DMatrix::from_columns(&rows).transpose();
            // back to absolute coordinates: G(x − x̄_∞) ≤ g
            let b = DVector::from_column_slice(&rhs) + &hm * &target.x;
            return Ok((Polytope::new(hm, b)?.with_label("X_f"), it));
        }
    }
    Err(RompcError::NotConverged {
        what: "terminal invariant set recursion; scale down the constraint region around the target or use the terminal equality constraint".into(),
        iterations: MPI_MAX_ITER,
        estimate: f64::NAN,
    })
}

/// Prediction matrices: x_i = Φ_i x_0 + Γ_i U for i = 0..=N.
fn predictions(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    horizon: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let (n, m) = (a.nrows(), b.ncols());
    let mut phi = Vec::with_capacity(horizon + 1);
    let mut gamma = Vec::with_capacity(horizon + 1);
    phi.push(DMatrix::identity(n, n));
    gamma.push(DMatrix::zeros(n, m * horizon));
    for i in 1..=horizon {
        let mut g = a * &gamma[i - 1];
        g.view_mut((0, (i - 1) * m), (n, m)).copy_from(b);
        gamma.push(g);
        phi.push(a * &phi[i - 1]);
    }
    (phi, gamma)
}

/// Condensed QP over U = [ū_0; …; ū_{N−1}].
pub fn build_qp(spec: &OcpSpec, x0: &DVector<f64>) -> Result<QuadraticProgram> {
    spec.validate()?;
    let (n, m, nh) = (spec.n(), spec.m(), spec.horizon);
    if x0.len() != n {
        return Err(RompcError::dims(format!(
            "initial state has length {} for n = {n}",
            x0.len()
        )));
    }
    let nu = m * nh;
    let (phi, gamma) = predictions(&spec.a, &spec.b, nh);
    let u_inf = DVector::from_fn(nu, |i, _| spec.target.u[i % m]);

    let mut hess = DMatrix::zeros(nu, nu);
    let mut lin = DVector::zeros(nu);
    let mut offset = 0.0;
    for i in 0..=nh {
        let w = if i < nh { &spec.q } else { &spec.p };
        let f = &phi[i] * x0 - &spec.target.x;
        let wg = w * &gamma[i];
        hess += gamma[i].transpose() * &wg;
        lin += wg.transpose() * &f;
        offset += f.dot(&(w * &f));
    }
    for i in 0..nh {
        let blk = hess.view((i * m, i * m), (m, m)) + &spec.r;
        hess.view_mut((i * m, i * m), (m, m)).copy_from(&blk);
        let du = &spec.r * &spec.target.u;
        lin.rows_mut(i * m, m).axpy(-1.0, &du, 1.0);
        offset += spec.target.u.dot(&du);
    }
    let p = linalg::symmetrize(&(hess * 2.0));
    let q = lin * 2.0;
    debug_assert_eq!(u_inf.len(), nu);

    let hz = &spec.zbar.h * &spec.h;
    let (rz, ru) = (spec.zbar.num_rows(), spec.ubar.num_rows());
    let rt = match &spec.terminal {
        TerminalConstraint::Set(x_f) => x_f.num_rows(),
        TerminalConstraint::Equality => 0,
    };
    let mut a_in = DMatrix::zeros(nh * (rz + ru) + rt, nu);
    let mut b_in = DVector::zeros(nh * (rz + ru) + rt);
    for i in 0..nh {
        let r0 = i * (rz + ru);
        a_in.view_mut((r0, 0), (rz, nu))
            .copy_from(&(&hz * &gamma[i]));
        b_in.rows_mut(r0, rz)
            .copy_from(&(&spec.zbar.b - &hz * (&phi[i] * x0)));
        a_in.view_mut((r0 + rz, i * m), (ru, m))
            .copy_from(&spec.ubar.h);
        b_in.rows_mut(r0 + rz, ru).copy_from(&spec.ubar.b);
    }
    let xn_free = &phi[nh] * x0;
    let mut qp = QuadraticProgram::unconstrained(p, q);
    qp.offset = offset;
    match &spec.terminal {
        TerminalConstraint::Set(x_f) => {
            let r0 = nh * (rz + ru);
            a_in.view_mut((r0, 0), (rt, nu))
                .copy_from(&(&x_f.h * &gamma[nh]));
            b_in.rows_mut(r0, rt)
                .copy_from(&(&x_f.b - &x_f.h * &xn_free));
        }
        TerminalConstraint::Equality => {
            qp.a_eq = gamma[nh].clone();
            qp.b_eq = &spec.target.x - &xn_free;
        }
    }
    qp.a_ineq = a_in;
    qp.b_ineq = b_in;
    Ok(qp)
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    /// ū*_{k|k}; zero-length when the problem is infeasible.
    pub u0: DVector<f64>,
    pub u_seq: Vec<DVector<f64>>,
    pub x_pred: Vec<DVector<f64>>,
    pub status: SolveStatus,
    pub multipliers: Option<DVector<f64>>,
}

impl OcpSolution {
    pub fn is_feasible(&self) -> bool {
        self.status.status == Status::Optimal
    }

    pub fn cost(&self) -> f64 {
        self.status.objective
    }

    /// Next step's starting point: the tail of this plan extended by the
    /// terminal feedback.
    pub fn shifted_warm_start(&self, spec: &OcpSpec) -> Option<WarmStart> {
        if !self.is_feasible() || self.u_seq.is_empty() {
            return None;
        }
        let m = spec.m();
        let nh = self.u_seq.len();
        let mut x = DVector::zeros(m * nh);
        for i in 1..nh {
            x.rows_mut((i - 1) * m, m).copy_from(&self.u_seq[i]);
        }
        let xn = self.x_pred.last()?;
        let tail = &spec.k_f * (xn - &spec.target.x) + &spec.target.u;
        x.rows_mut((nh - 1) * m, m).copy_from(&tail);
        Some(WarmStart { x, y: None })
    }
}

pub fn default_qp_options() -> QpOptions {
    QpOptions {
        eps_abs: 1e-9,
        eps_rel: 1e-9,
        max_iter: 50_000,
        ..QpOptions::default()
    }
}

pub fn solve_ocp(
    spec: &OcpSpec,
    x0: &DVector<f64>,
    warm: Option<&WarmStart>,
    opts: &QpOptions,
) -> Result<OcpSolution> {
    let qp = build_qp(spec, x0)?;
    let res = solve_qp(&qp, opts, warm)?;
    let (n, m, nh) = (spec.n(), spec.m(), spec.horizon);
    let Some(u) = res
        .status
        .x
        .clone()
        .filter(|_| res.status.status == Status::Optimal)
    else {
        return Ok(OcpSolution {
            u0: DVector::zeros(0),
            u_seq: Vec::new(),
            x_pred: Vec::new(),
            status: res.status,
            multipliers: None,
        });
    };
    let u_seq: Vec<DVector<f64>> = (0..nh).map(|i| u.rows(i * m, m).into_owned()).collect();
    let mut x_pred = Vec::with_capacity(nh + 1);
    x_pred.push(x0.clone());
    for (i, ui) in u_seq.iter().enumerate() {
        let next = &spec.a * &x_pred[i] + &spec.b * ui;
        x_pred.push(next);
    }
    debug_assert_eq!(x_pred[0].len(), n);
    Ok(OcpSolution {
        u0: u_seq[0].clone(),
        u_seq,
        x_pred,
        status: res.status,
        multipliers: res.y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeDomain;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn rom(a: DMatrix<f64>, b: DMatrix<f64>, h: DMatrix<f64>) -> StateSpaceModel {
        let n = a.nrows();
        StateSpaceModel::new(
            a,
            b,
            None,
            DMatrix::identity(n, n),
            h,
            TimeDomain::Discrete { dt: 1.0 },
        )
        .unwrap()
    }

    fn spec_for(
        model: &StateSpaceModel,
        zbar: Polytope,
        ubar: Polytope,
        horizon: usize,
    ) -> OcpSpec {
        let (n, m) = (model.n(), model.m());
        let q = DMatrix::identity(n, n);
        let r = DMatrix::identity(m, m);
        let target = Target::origin(n, m);
        let ti = terminal_ingredients(model, &q, &r, &zbar, &ubar, &target).unwrap();
        OcpSpec {
            a: model.a.clone(),
            b: model.b.clone(),
            h: model.h.clone(),
            zbar,
            ubar,
            q,
            r,
            p: ti.p,
            k_f: ti.k_f,
            terminal: TerminalConstraint::Set(ti.x_f),
            horizon,
            target,
        }
    }

    #[test]
    fn scalar_invariant_set_is_symmetric_interval() {
        let m = rom(mat(1, 1, &[0.5]), mat(1, 1, &[1.0]), mat(1, 1, &[1.0]));
        let s = Polytope::symmetric_box(&[1.0]).unwrap();
        let ti = terminal_ingredients(
            &m,
            &mat(1, 1, &[1.0]),
            &mat(1, 1, &[1.0]),
            &s,
            &s,
            &Target::origin(1, 1),
        )
        .unwrap();
        let (lo, hi) = ti.x_f.as_box().unwrap();
        assert_relative_eq!(lo[0], -hi[0], epsilon = 1e-12);
        assert!(hi[0] > 0.0 && hi[0] <= 1.0);
        // the binding limit is |K_f x| ≤ 1 or |x| ≤ 1
        let expect = (1.0f64).min(1.0 / ti.k_f[(0, 0)].abs());
        assert_relative_eq!(hi[0], expect, max_relative = 1e-9);
    }

    #[test]
    fn invariant_set_is_invariant_by_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = rom(
            mat(2, 2, &[1.1, 0.3, 0.0, 0.9]),
            mat(2, 1, &[0.0, 1.0]),
            mat(1, 2, &[1.0, 0.0]),
        );
        let zbar = Polytope::symmetric_box(&[2.0]).unwrap();
        let ubar = Polytope::symmetric_box(&[1.0]).unwrap();
        let target = Target::origin(2, 1);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let ti = terminal_ingredients(&m, &q, &r, &zbar, &ubar, &target).unwrap();
        let ak = &m.a + &m.b * &ti.k_f;
        let mut hits = 0;
        while hits < 100 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            if !ti.x_f.contains(&x, 0.0).unwrap() {
                continue;
            }
            hits += 1;
            assert!(ti.x_f.contains(&(&ak * &x), 1e-9).unwrap());
            assert!(zbar.contains(&(&m.h * &x), 1e-9).unwrap());
            assert!(ubar.contains(&(&ti.k_f * &x), 1e-9).unwrap());
        }
    }

    #[test]
    fn over_tightened_set_is_rejected() {
        let m = rom(mat(1, 1, &[0.5]), mat(1, 1, &[1.0]), mat(1, 1, &[1.0]));
        let empty =
            Polytope::new(mat(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![-0.1, -0.1])).unwrap();
        let u = Polytope::symmetric_box(&[1.0]).unwrap();
        assert!(terminal_ingredients(
            &m,
            &mat(1, 1, &[1.0]),
            &mat(1, 1, &[1.0]),
            &empty,
            &u,
            &Target::origin(1, 1)
        )
        .is_err());
    }

    #[test]
    fn one_step_scalar_matches_closed_form() {
        let m = rom(mat(1, 1, &[0.8]), mat(1, 1, &[0.5]), mat(1, 1, &[1.0]));
        let big = Polytope::symmetric_box(&[100.0]).unwrap();
        let spec = spec_for(&m, big.clone(), big, 1);
        let x0 = DVector::from_vec(vec![0.3]);
        let sol = solve_ocp(&spec, &x0, None, &default_qp_options()).unwrap();
        assert!(sol.is_feasible());
        let (a, b, p) = (0.8, 0.5, spec.p[(0, 0)]);
        let u = -p * a * b * 0.3 / (1.0 + p * b * b);
        assert_relative_eq!(sol.u0[0], u, epsilon = 1e-7);
        let cost = 0.09 + u * u + p * (a * 0.3 + b * u).powi(2);
        assert_relative_eq!(sol.cost(), cost, epsilon = 1e-7);
    }

    #[test]
    fn target_start_has_zero_cost() {
        let m = rom(
            mat(2, 2, &[0.9, 0.2, 0.0, 0.7]),
            mat(2, 1, &[0.0, 1.0]),
            mat(1, 2, &[1.0, 1.0]),
        );
        let zbar = Polytope::symmetric_box(&[1.0]).unwrap();
        let ubar = Polytope::symmetric_box(&[1.0]).unwrap();
        let (n, mm) = (2, 1);
        let q = DMatrix::identity(n, n);
        let r = DMatrix::identity(mm, mm);
        // steady state for ū = 0.05
        let u_inf = DVector::from_vec(vec![0.05]);
        let x_inf = (DMatrix::identity(2, 2) - &m.a)
            .lu()
            .solve(&(&m.b * &u_inf))
            .unwrap();
        let target = Target {
            x: x_inf.clone(),
            u: u_inf.clone(),
        };
        let ti = terminal_ingredients(&m, &q, &r, &zbar, &ubar, &target).unwrap();
        assert!(ti.x_f.contains(&x_inf, 1e-12).unwrap());
        let spec = OcpSpec {
            a: m.a.clone(),
            b: m.b.clone(),
            h: m.h.clone(),
            zbar,
            ubar,
            q,
            r,
            p: ti.p,
            k_f: ti.k_f,
            terminal: TerminalConstraint::Set(ti.x_f),
            horizon: 5,
            target,
        };
        let sol = solve_ocp(&spec, &x_inf, None, &default_qp_options()).unwrap();
        assert!(sol.cost().abs() < 1e-10);
        for u in &sol.u_seq {
            assert_relative_eq!(u[0], 0.05, epsilon = 1e-7);
        }
    }

    #[test]
    fn infeasible_start_is_reported() {
        let m = rom(mat(1, 1, &[0.5]), mat(1, 1, &[1.0]), mat(1, 1, &[1.0]));
        let s = Polytope::symmetric_box(&[1.0]).unwrap();
        let spec = spec_for(&m, s.clone(), s, 3);
        let sol = solve_ocp(
            &spec,
            &DVector::from_vec(vec![50.0]),
            None,
            &default_qp_options(),
        )
        .unwrap();
        assert_eq!(sol.status.status, Status::Infeasible);
        assert!(sol.shifted_warm_start(&spec).is_none());
    }

    #[test]
    fn long_horizon_matches_lqr_gain() {
        let m = rom(
            mat(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            mat(2, 1, &[0.005, 0.1]),
            mat(1, 2, &[1.0, 0.0]),
        );
        let big = Polytope::symmetric_box(&[1e3]).unwrap();
        let spec = spec_for(&m, big.clone(), big, 50);
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        let sol = solve_ocp(&spec, &x0, None, &default_qp_options()).unwrap();
        let lqr = &spec.k_f * &x0;
        assert!((sol.u0[0] - lqr[0]).abs() < 1e-4);
    }

    #[test]
    fn terminal_set_start_costs_at_most_terminal_cost() {
        let m = rom(
            mat(2, 2, &[1.1, 0.3, 0.0, 0.9]),
            mat(2, 1, &[0.0, 1.0]),
            mat(1, 2, &[1.0, 0.0]),
        );
        let zbar = Polytope::symmetric_box(&[2.0]).unwrap();
        let ubar = Polytope::symmetric_box(&[1.0]).unwrap();
        let spec = spec_for(&m, zbar, ubar, 4);
        let TerminalConstraint::Set(x_f) = &spec.terminal else {
            unreachable!()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        while hits < 20 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            if !x_f.contains(&x, 0.0).unwrap() {
                continue;
            }
            hits += 1;
            let sol = solve_ocp(&spec, &x, None, &default_qp_options()).unwrap();
            assert!(sol.is_feasible());
            assert!(sol.cost() <= x.dot(&(&spec.p * &x)) * (1.0 + 1e-7) + 1e-9);
        }
    }

    #[test]
    fn nominal_closed_loop_is_recursively_feasible_with_decreasing_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = rom(
            mat(2, 2, &[1.1, 0.3, 0.0, 0.9]),
            mat(2, 1, &[0.0, 1.0]),
            mat(1, 2, &[1.0, 0.0]),
        );
        let zbar = Polytope::symmetric_box(&[2.0]).unwrap();
        let ubar = Polytope::symmetric_box(&[1.0]).unwrap();
        let spec = spec_for(&m, zbar, ubar, 8);
        let opts = default_qp_options();
        let mut runs = 0;
        while runs < 10 {
            let mut x = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let first = solve_ocp(&spec, &x, None, &opts).unwrap();
            if !first.is_feasible() {
                continue;
            }
            runs += 1;
            let mut prev = first.cost();
            let mut warm = first.shifted_warm_start(&spec);
            x = &spec.a * &x + &spec.b * &first.u0;
            for _ in 0..60 {
                let sol = solve_ocp(&spec, &x, warm.as_ref(), &opts).unwrap();
                assert!(sol.is_feasible());
                assert!(sol.cost() <= prev + 1e-7 * (1.0 + prev));
                prev = sol.cost();
                warm = sol.shifted_warm_start(&spec);
                x = &spec.a * &x + &spec.b * &sol.u0;
            }
            assert!(x.norm() < 1e-3);
        }
    }

    #[test]
    fn equality_terminal_reaches_target() {
        let m = rom(
            mat(2, 2, &[0.9, 0.2, 0.0, 0.7]),
            mat(2, 1, &[0.0, 1.0]),
            mat(1, 2, &[1.0, 1.0]),
        );
        let s = Polytope::symmetric_box(&[5.0]).unwrap();
        let mut spec = spec_for(&m, s.clone(), s, 6);
        spec.terminal = TerminalConstraint::Equality;
        let sol = solve_ocp(
            &spec,
            &DVector::from_vec(vec![1.0, 1.0]),
            None,
            &default_qp_options(),
        )
        .unwrap();
        assert!(sol.is_feasible());
        assert!(sol.x_pred.last().unwrap().amax() < 1e-6);
    }
}
