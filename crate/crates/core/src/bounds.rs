//! Worst-case tracking-error bounds Δ_z, Δ_u for constraint tightening.
//!
//! The error is split into a tail part bounded in a weighted norm (Δ⁽¹⁾)
//! and a recent-window part bounded row by row with linear programs (Δ⁽²⁾).

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RompcError};
use crate::geometry::{support_max, weighted_norm_max, Polytope, Support};
use crate::linalg;
use crate::model::StateSpaceModel;
use crate::solvers::{DualSimplex, Status};
use crate::synthesis::ErrorSystem;

/// Default bound on the initial weighted error norm.
pub const DEFAULT_ETA_INIT: f64 = 1e10;
/// Largest error-system dimension for the dense Lyapunov route.
pub const LYAPUNOV_MAX_DIM: usize = 2000;
/// Largest error-system dimension for the dense eigen route.
pub const EIGEN_MAX_DIM: usize = 5000;
/// Values of Δ⁽¹⁾ below this are reported as zero.
pub const UNDERFLOW_CLAMP: f64 = 1e-300;

const CUT_ROUNDS: usize = 500;
const CUTS_PER_ROUND: usize = 200;
const FEAS_TOL: f64 = 1e-9;
const LP_MAX_ITER: usize = 1_000_000;
/// Artificial box on preconditioned initial states; reaching it means unbounded.
const PRECOND_BOX: f64 = 1e8;

/// The admissible sets: performance Z, input U, process noise W, sensor noise V.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSets {
    pub z: Polytope,
    pub u: Polytope,
    pub w: Polytope,
    pub v: Polytope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayMethod {
    /// G from AᵀGA − η²G + I = 0, M = 1, γ = ‖A‖_G ≤ η.
    Lyapunov { eta: f64 },
    /// G = I, γ = ρ(A), M = cond(T) for A = TDT⁻¹.
    Eigen,
}

/// (M, γ, G) with ‖A_ε^i‖_G ≤ Mγ^i for all i ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayParameters {
    pub m: f64,
    pub gamma: f64,
    pub g: DMatrix<f64>,
    pub method: DecayMethod,
}

impl DecayParameters {
    /// ‖A^i‖_G for the given A.
    pub fn weighted_power_norm(&self, a: &DMatrix<f64>, i: u32) -> Result<f64> {
        let l = linalg::cholesky(&self.g, "G")?;
        let mut p = DMatrix::identity(a.nrows(), a.nrows());
        for _ in 0..i {
            p = &p * a;
        }
        Ok(weighted_matrix_norm(&l, &p))
    }
}

/// ‖A‖_G = ‖LᵀAL⁻ᵀ‖₂ with G = LLᵀ.
fn weighted_matrix_norm(l: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let lta = l.transpose() * a;
    // X = LᵀA L⁻ᵀ  ⇔  L Xᵀ = (LᵀA)ᵀ
    let xt = l
        .solve_lower_triangular(&lta.transpose())
        .expect("Cholesky factor is nonsingular");
    linalg::spectral_norm(&xt)
}

pub fn compute_decay_params(a_eps: &DMatrix<f64>, method: DecayMethod) -> Result<DecayParameters> {
    let rho = linalg::dense_spectral_radius(a_eps);
    if !(rho < 1.0) {
        return Err(RompcError::Unstable(format!(
            "error dynamics have spectral radius {rho}"
        )));
    }
    let ne = a_eps.nrows();
    match method {
        DecayMethod::Lyapunov { eta } => {
            if !(eta > rho && eta < 1.0) {
                return Err(RompcError::invalid(format!(
                    "Lyapunov rate η = {eta} must lie in ({rho}, 1)"
                )));
            }
            let g =
                linalg::solve_dlyap(&(a_eps / eta), &(DMatrix::identity(ne, ne) / (eta * eta)))?;
            let g = linalg::symmetrize(&g);
            let l = linalg::cholesky(&g, "Lyapunov weight G")?;
            let gamma = weighted_matrix_norm(&l, a_eps);
            Ok(DecayParameters {
                m: 1.0,
                gamma,
                g,
                method,
            })
        }
        DecayMethod::Eigen => {
            let info = linalg::eigen_decomposition(a_eps);
            if !info.diagonalizable || !info.condition.is_finite() {
                return Err(RompcError::Assumption(
                    "error dynamics are not diagonalizable; use the Lyapunov route".into(),
                ));
            }
            let gamma = info
                .eigenvalues
                .iter()
                .map(|l| l.norm())
                .fold(0.0, f64::max);
            Ok(DecayParameters {
                m: info.condition.max(1.0),
                gamma,
                g: DMatrix::identity(ne, ne),
                method,
            })
        }
    }
}

/// Lyapunov rate used when none is configured: a quarter of the way from ρ to 1.
pub fn default_lyapunov_eta(rho: f64) -> f64 {
    rho + 0.25 * (1.0 - rho)
}

/// Δ⁽¹⁾ = Mγ^{2τ}η + Mγ^τ(C_r + C_ω)/(1 − γ).
pub fn delta1(
    params: &DecayParameters,
    eta_init: f64,
    tau: usize,
    c_r: f64,
    c_w: f64,
) -> Result<f64> {
    let (m, g) = (params.m, params.gamma);
    if !(g > 0.0 && g < 1.0) || m < 1.0 || eta_init < 0.0 || c_r < 0.0 || c_w < 0.0 {
        return Err(RompcError::invalid(
            "Δ⁽¹⁾ needs M ≥ 1, γ ∈ (0,1) and nonnegative constants",
        ));
    }
    let t = tau as f64;
    let v = m * g.powf(2.0 * t) * eta_init + m * g.powf(t) * (c_r + c_w) / (1.0 - g);
    Ok(clamp_underflow(v))
}

fn clamp_underflow(v: f64) -> f64 {
    if v < UNDERFLOW_CLAMP {
        if v > 0.0 {
            warn!("tail bound {v:e} underflows; reporting 0");
        }
        0.0
    } else {
        v
    }
}

/// Continuous-time tail bound βe^{2ατ}η + βe^{ατ}(C_r + C_ω)/(−α).
pub fn ct_delta1(
    beta: f64,
    alpha: f64,
    eta_init: f64,
    tau: f64,
    c_r: f64,
    c_w: f64,
) -> Result<f64> {
    if !(alpha < 0.0) {
        return Err(RompcError::invalid(format!(
            "decay rate α must be negative, got {alpha}"
        )));
    }
    if beta < 1.0 {
        return Err(RompcError::invalid(format!(
            "β must be at least 1, got {beta}"
        )));
    }
    let v = beta * (2.0 * alpha * tau).exp() * eta_init
        + beta * (alpha * tau).exp() * (c_r + c_w) / (-alpha);
    Ok(clamp_underflow(v))
}

/// (β, α) with ‖e^{At}‖_G ≤ βe^{αt} for Hurwitz A.
///
/// With `mu` given, G solves (A + μI)ᵀG + G(A + μI) + I = 0 and β = 1,
/// α = −μ − 1/(2λ_max(G)); otherwise the eigen route with G = I.
pub fn compute_ct_decay_params(
    a_eps: &DMatrix<f64>,
    mu: Option<f64>,
) -> Result<(f64, f64, DMatrix<f64>)> {
    let ne = a_eps.nrows();
    let eig = linalg::eigenvalues(a_eps);
    let abscissa = eig.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if !(abscissa < 0.0) {
        return Err(RompcError::Unstable(format!(
            "error dynamics have spectral abscissa {abscissa}"
        )));
    }
    match mu {
        Some(mu) => {
            if !(mu > 0.0 && mu < -abscissa) {
                return Err(RompcError::invalid(format!(
                    "shift μ = {mu} must lie in (0, {})",
                    -abscissa
                )));
            }
            let shifted = a_eps + DMatrix::identity(ne, ne) * mu;
            let g = linalg::symmetrize(&linalg::solve_clyap(&shifted, &DMatrix::identity(ne, ne))?);
            let lmax = g.clone().symmetric_eigenvalues().max();
            Ok((1.0, -mu - 1.0 / (2.0 * lmax), g))
        }
        None => {
            let info = linalg::eigen_decomposition(a_eps);
            if !info.diagonalizable {
                return Err(RompcError::Assumption(
                    "error dynamics are not diagonalizable".into(),
                ));
            }
            Ok((info.condition.max(1.0), abscissa, DMatrix::identity(ne, ne)))
        }
    }
}

/// Box over-approximation of every simulated-ROM state that can be followed
/// by `i_bar` steps respecting U and Z.
pub fn compute_xbar(
    rom: &StateSpaceModel,
    z: &Polytope,
    u: &Polytope,
    i_bar: usize,
) -> Result<Polytope> {
    let n = rom.n();
    if i_bar + 1 < n {
        return Err(RompcError::invalid(format!(
            "look-ahead ī = {i_bar} must be at least n − 1 = {}",
            n - 1
        )));
    }
    check_dims(rom, z, u)?;
    let window = Window::new(&rom.a, &rom.b, &rom.h, None, z, u, i_bar + 1, i_bar)?;
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n];
    for l in 0..n {
        for (sign, out) in [(1.0, &mut upper), (-1.0, &mut lower)] {
            let mut cx = vec![DVector::zeros(n); i_bar + 1];
            cx[0][l] = sign;
            let cu = vec![DVector::zeros(rom.m()); i_bar];
            let v = window.maximize(&cx, &cu).map_err(|e| match e {
                RompcError::LpUnbounded(_) => RompcError::UnboundedSet(format!(
                    "reachable-state box is unbounded in coordinate {l}; (A, H) must be observable"
                )),
                other => other,
            })?;
            out[l] = sign * v;
        }
    }
    Ok(Polytope::from_box(&lower, &upper)?.with_label("Xbar"))
}

fn check_dims(rom: &StateSpaceModel, z: &Polytope, u: &Polytope) -> Result<()> {
    if z.dim() != rom.o() || u.dim() != rom.m() {
        return Err(RompcError::dims(format!(
            "sets have dimensions Z:{} U:{} but the model has o = {}, m = {}",
            z.dim(),
            u.dim(),
            rom.o(),
            rom.m()
        )));
    }
    Ok(())
}

/// C_r = max ‖B_ε r‖_G over X̄ × U, C_ω = max ‖G_ε ω‖_G over W × V.
pub fn compute_cr_cw(
    err: &ErrorSystem,
    xbar: &Polytope,
    sets: &ConstraintSets,
    g: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let c_r = if err.b_eps.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        weighted_norm_max(&err.b_eps, g, &[xbar, &sets.u])?
    };
    let c_w = if err.g_eps.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        weighted_norm_max(&err.g_eps, g, &[&sets.w, &sets.v])?
    };
    Ok((c_r, c_w))
}

/// Trajectory window of the simulated ROM used by the bound LPs.
///
/// Variables are the initial state x₀ and inputs u₀ … u_{nu−1}; states
/// x_t = Aᵗx₀ + Σ_{s<t} A^{t−1−s}Bu_s for t < nx are constrained to Z (and to
/// X̄ when given), inputs to U. Rows are generated lazily: the LP is solved
/// on a subset and violated rows are added until the solution is feasible.
struct Window<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    /// Z rows mapped to the state: H_z H.
    hzh: DMatrix<f64>,
    bz: DVector<f64>,
    xbar: Option<(Vec<f64>, Vec<f64>)>,
    u: &'a Polytope,
    u_box: Option<(Vec<f64>, Vec<f64>)>,
    /// Bounding box of U (equal to U when U is a box).
    u_lo: Vec<f64>,
    u_hi: Vec<f64>,
    nx: usize,
    nu: usize,
    /// powers[k] = Aᵏ
    powers: Vec<DMatrix<f64>>,
    /// pb[k] = AᵏB
    pb: Vec<DMatrix<f64>>,
    /// x_0 = S y substitution used when there is no state box.
    precond: Option<DMatrix<f64>>,
}

impl<'a> Window<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        a: &'a DMatrix<f64>,
        b: &'a DMatrix<f64>,
        h: &DMatrix<f64>,
        xbar: Option<&Polytope>,
        z: &Polytope,
        u: &'a Polytope,
        nx: usize,
        nu: usize,
    ) -> Result<Self> {
        let xbar = match xbar {
            Some(x) => Some(
                x.as_box()
                    .ok_or_else(|| RompcError::invalid("X̄ must be a box"))?,
            ),
            None => None,
        };
        let mut powers = Vec::with_capacity(nx);
        let mut pb = Vec::with_capacity(nx);
        let mut p = DMatrix::identity(a.nrows(), a.nrows());
        for _ in 0..nx {
            pb.push(&p * b);
            let next = a * &p;
            powers.push(p);
            p = next;
        }
        let u_box = u.as_box();
        let (u_lo, u_hi) = match &u_box {
            Some(bx) => bx.clone(),
            None => bounding_box(u)?,
        };
        let hzh = &z.h * h;
        let precond = if xbar.is_none() {
            Some(observability_preconditioner(&hzh, &powers))
        } else {
            None
        };
        Ok(Window {
            a,
            b,
            hzh,
            bz: z.b.clone(),
            xbar,
            u,
            u_box,
            u_lo,
            u_hi,
            nx,
            nu,
            powers,
            pb,
            precond,
        })
    }

    fn n(&self) -> usize {
        self.a.nrows()
    }

    fn m(&self) -> usize {
        self.b.ncols()
    }

    fn num_vars(&self) -> usize {
        self.n() + self.nu * self.m()
    }

    /// Row of `cᵀx_t` in terms of the LP variables.
    fn state_row(&self, t: usize, c: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.n(), self.m());
        let mut row = DVector::zeros(self.num_vars());
        row.rows_mut(0, n)
            .copy_from(&(self.powers[t].transpose() * c));
        for s in 0..t.min(self.nu) {
            row.rows_mut(n + s * m, m)
                .copy_from(&(self.pb[t - 1 - s].transpose() * c));
        }
        row
    }

    fn states(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let (n, m) = (self.n(), self.m());
        let mut out = Vec::with_capacity(self.nx);
        out.push(x.rows(0, n).into_owned());
        for t in 1..self.nx {
            let next = self.a * &out[t - 1] + self.b * x.rows(n + (t - 1) * m, m);
            out.push(next);
        }
        out
    }

    /// All state rows as (t, kind, index) with kind 0 = Z row, 1 = X̄ upper, 2 = X̄ lower.
    fn violations(&self, x: &DVector<f64>) -> Vec<(f64, usize, u8, usize)> {
        let mut out = Vec::new();
        for (t, xt) in self.states(x).iter().enumerate() {
            let hz = &self.hzh * xt;
            for r in 0..hz.len() {
                let v = hz[r] - self.bz[r];
                if v > FEAS_TOL * (1.0 + self.bz[r].abs()) {
                    out.push((v, t, 0, r));
                }
            }
            if let Some((lo, hi)) = &self.xbar {
                for j in 0..xt.len() {
                    if xt[j] - hi[j] > FEAS_TOL * (1.0 + hi[j].abs()) {
                        out.push((xt[j] - hi[j], t, 1, j));
                    }
                    if lo[j] - xt[j] > FEAS_TOL * (1.0 + lo[j].abs()) {
                        out.push((lo[j] - xt[j], t, 2, j));
                    }
                }
            }
        }
        out
    }

    /// Row of a state constraint; x_0 columns are in preconditioned coordinates.
    fn cut(&self, t: usize, kind: u8, idx: usize) -> (DVector<f64>, f64) {
        let (mut row, b) = self.raw_cut(t, kind, idx);
        if let Some(s) = &self.precond {
            let n = self.n();
            let r0 = s.tr_mul(&row.rows(0, n));
            row.rows_mut(0, n).copy_from(&r0);
        }
        (row, b)
    }

    fn raw_cut(&self, t: usize, kind: u8, idx: usize) -> (DVector<f64>, f64) {
        let n = self.n();
        match kind {
            0 => (
                self.state_row(t, &self.hzh.row(idx).transpose()),
                self.bz[idx],
            ),
            1 => {
                let e = DVector::from_fn(n, |i, _| if i == idx { 1.0 } else { 0.0 });
                (self.state_row(t, &e), self.xbar.as_ref().unwrap().1[idx])
            }
            _ => {
                let e = DVector::from_fn(n, |i, _| if i == idx { -1.0 } else { 0.0 });
                (self.state_row(t, &e), -self.xbar.as_ref().unwrap().0[idx])
            }
        }
    }

    /// max Σ_t cx_tᵀx_t + Σ_t cu_tᵀu_t over the window.
    fn maximize(&self, cx: &[DVector<f64>], cu: &[DVector<f64>]) -> Result<f64> {
        let (n, m) = (self.n(), self.m());
        debug_assert_eq!(cx.len(), self.nx);
        debug_assert_eq!(cu.len(), self.nu);
        // adjoint recursion: g_t = cx_t + Aᵀg_{t+1}; coefficient of u_t is cu_t + Bᵀg_{t+1}
        let nv = self.num_vars();
        let mut c = DVector::zeros(nv);
        let mut g = DVector::zeros(n);
        for t in (0..self.nx).rev() {
            if t < self.nu {
                c.rows_mut(n + t * m, m)
                    .copy_from(&(&cu[t] + self.b.transpose() * &g));
            }
            g = &cx[t] + self.a.transpose() * &g;
        }
        for t in self.nx..self.nu {
            c.rows_mut(n + t * m, m).copy_from(&cu[t]);
        }
        c.rows_mut(0, n).copy_from(&g);
        if c.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }

        let mut lower = DVector::zeros(nv);
        let mut upper = DVector::zeros(nv);
        let mut seed: Vec<(DVector<f64>, f64)> = Vec::new();
        match (&self.xbar, &self.precond) {
            (Some((lo, hi)), _) => {
                for j in 0..n {
                    lower[j] = lo[j];
                    upper[j] = hi[j];
                }
            }
            (None, Some(s)) => {
                let cx0 = s.tr_mul(&c.rows(0, n));
                c.rows_mut(0, n).copy_from(&cx0);
                for j in 0..n {
                    lower[j] = -PRECOND_BOX;
                    upper[j] = PRECOND_BOX;
                }
                for t in 0..self.nx.min(2 * n) {
                    for r in 0..self.bz.len() {
                        seed.push(self.cut(t, 0, r));
                    }
                }
            }
            (None, None) => unreachable!("a window without a state box is preconditioned"),
        }
        for t in 0..self.nu {
            for j in 0..m {
                lower[n + t * m + j] = self.u_lo[j];
                upper[n + t * m + j] = self.u_hi[j];
            }
            if self.u_box.is_none() {
                for r in 0..self.u.num_rows() {
                    let mut row = DVector::zeros(nv);
                    row.rows_mut(n + t * m, m)
                        .copy_from(&self.u.h.row(r).transpose());
                    seed.push((row, self.u.b[r]));
                }
            }
        }

        let mut lp = DualSimplex::new(&c, &lower, &upper, FEAS_TOL)?;
        lp.add_rows(&seed)?;
        for round in 0..CUT_ROUNDS {
            match lp.solve(LP_MAX_ITER) {
                Status::Optimal => {}
                Status::Infeasible => {
                    return Err(RompcError::Infeasible(
                        "window LP is infeasible; the constraint sets must contain the origin"
                            .into(),
                    ))
                }
                _ => return Err(RompcError::Solver("window LP hit the iteration cap".into())),
            }

            let mut x = lp.x();
            if let Some(s) = &self.precond {
                if x.rows(0, n).amax() > 0.5 * PRECOND_BOX {
                    return Err(RompcError::LpUnbounded("window LP is unbounded".into()));
                }
                let x0 = s * x.rows(0, n);
                x.rows_mut(0, n).copy_from(&x0);
            }
            let mut viol = self.violations(&x);
            if viol.is_empty() {
                debug!(
                    "window LP converged after {round} cut rounds, {} rows, {} pivots",
                    lp.num_rows(),
                    lp.iterations()
                );
                return Ok(lp.objective());
            }
            viol.sort_by(|p, q| q.0.total_cmp(&p.0));
            let cuts: Vec<_> = viol
                .iter()
                .take(CUTS_PER_ROUND)
                .map(|&(_, t, kind, idx)| self.cut(t, kind, idx))
                .collect();
            lp.add_rows(&cuts)?;
        }
        Err(RompcError::NotConverged {
            what: "window LP row generation".into(),
            iterations: CUT_ROUNDS,
            estimate: f64::NAN,
        })
    }
}

/// Σ_s max over W × V of ψ_sᵀG_ε ω, which separates per factor.
fn disturbance_support(g_rows: &[DVector<f64>], sets: &ConstraintSets) -> Result<f64> {
    let mw = sets.w.dim();
    let mut total = 0.0;
    for gs in g_rows {
        for (part, set) in [
            (gs.rows(0, mw).into_owned(), &sets.w),
            (gs.rows(mw, gs.len() - mw).into_owned(), &sets.v),
        ] {
            if part.iter().all(|&v| v == 0.0) {
                continue;
            }
            match support_max(&part, set)? {
                Support::Bounded(v) => total += v,
                Support::Unbounded => {
                    return Err(RompcError::UnboundedSet(format!(
                        "disturbance set {} is unbounded",
                        set.label.as_deref().unwrap_or("")
                    )))
                }
            }
        }
    }
    Ok(total)
}

fn bounding_box(set: &Polytope) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = set.dim();
    let (mut lo, mut hi) = (vec![0.0; d], vec![0.0; d]);
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(d);
            c[j] = sign;
            let v = match support_max(&c, set)? {
                Support::Bounded(v) => v,
                Support::Unbounded => {
                    return Err(RompcError::UnboundedSet(format!(
                        "{} is unbounded",
                        set.label.as_deref().unwrap_or("set")
                    )))
                }
            };
            if sign > 0.0 {
                hi[j] = v;
            } else {
                lo[j] = -v;
            }
        }
    }
    Ok((lo, hi))
}

/// S = VΣ⁻¹ from the observability Gramian VΣ²Vᵀ = Σ_t (H Aᵗ)ᵀ(H Aᵗ), so the
/// initial-state columns of the condensed Z rows are roughly orthonormal.
fn observability_preconditioner(hzh: &DMatrix<f64>, powers: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = hzh.ncols();
    let mut wo = DMatrix::zeros(n, n);
    for p in powers {
        let o = hzh * p;
        wo += o.tr_mul(&o);
    }
    let eig = linalg::symmetrize(&wo).symmetric_eigen();
    let floor = eig.eigenvalues.amax() * f64::EPSILON;
    let mut s = eig.eigenvectors.clone();
    for j in 0..n {
        let l = eig.eigenvalues[j].max(floor).max(f64::MIN_POSITIVE);
        s.column_mut(j).scale_mut(1.0 / l.sqrt());
    }
    s
}

/// Solver for Δ⁽²⁾(θ) shared across rows θ.
pub struct Delta2Problem<'a> {
    err: &'a ErrorSystem,
    sets: &'a ConstraintSets,
    window: Window<'a>,
    /// Step map Φ applied to θ each step (A_ε or e^{A_εΔt}).
    step: Option<DMatrix<f64>>,
    weights: Vec<f64>,
}

impl<'a> Delta2Problem<'a> {
    /// Discrete-time window: r_i for i ∈ [−τ, τ−1], objective over i ≥ 0.
    pub fn discrete(
        err: &'a ErrorSystem,
        rom: &'a StateSpaceModel,
        xbar: &Polytope,
        sets: &'a ConstraintSets,
        tau: usize,
    ) -> Result<Self> {
        if tau == 0 {
            return Err(RompcError::invalid("τ must be at least 1"));
        }
        check_dims(rom, &sets.z, &sets.u)?;
        let window = Window::new(
            &rom.a,
            &rom.b,
            &rom.h,
            Some(xbar),
            &sets.z,
            &sets.u,
            2 * tau,
            2 * tau,
        )?;
        Ok(Delta2Problem {
            err,
            sets,
            window,
            step: None,
            weights: vec![1.0; tau],
        })
    }

    /// Continuous-time window on the ZOH grid: r_i for i ∈ [−N_s, N_s] with
    /// trapezoid weights on i ≥ 0.
    pub fn continuous(
        err: &'a ErrorSystem,
        rom_d: &'a StateSpaceModel,
        xbar: &Polytope,
        sets: &'a ConstraintSets,
        tau_seconds: f64,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0 && tau_seconds > 0.0) {
            return Err(RompcError::invalid("τ and Δt must be positive"));
        }
        let ns_f = tau_seconds / dt;
        let ns = ns_f.round() as usize;
        if ns == 0 || (ns_f - ns as f64).abs() > 1e-9 * ns_f.max(1.0) {
            return Err(RompcError::invalid(format!(
                "Δt = {dt} must divide τ = {tau_seconds}"
            )));
        }
        check_dims(rom_d, &sets.z, &sets.u)?;
        let window = Window::new(
            &rom_d.a,
            &rom_d.b,
            &rom_d.h,
            Some(xbar),
            &sets.z,
            &sets.u,
            2 * ns + 1,
            2 * ns + 1,
        )?;
        let mut weights = vec![dt; ns + 1];
        weights[0] = dt / 2.0;
        weights[ns] = dt / 2.0;
        Ok(Delta2Problem {
            err,
            sets,
            window,
            step: Some(linalg::matrix_exponential(&err.a_eps, dt)),
            weights,
        })
    }

    fn horizon(&self) -> usize {
        self.weights.len()
    }

    pub fn solve(&self, theta: &DVector<f64>) -> Result<f64> {
        let ne = self.err.dim();
        if theta.len() != ne {
            return Err(RompcError::dims(format!(
                "θ has length {} for an error system of dimension {ne}",
                theta.len()
            )));
        }
        if theta.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        let (n, m) = (self.window.n(), self.window.m());
        let len = self.horizon();
        let hist = self.window.nx - len;
        // ψ_s = (Φᵀ)^s θ weights r_j with j = len − 1 − s
        let mut cx = vec![DVector::zeros(n); self.window.nx];
        let mut cu = vec![DVector::zeros(m); self.window.nu];
        let mut g_rows = Vec::with_capacity(len);
        let mut psi = theta.clone();
        for s in 0..len {
            let j = len - 1 - s;
            let w = self.weights[j];
            let rb = self.err.b_eps.tr_mul(&psi) * w;
            cx[hist + j] = rb.rows(0, n).into_owned();
            cu[hist + j] = rb.rows(n, m).into_owned();
            g_rows.push(self.err.g_eps.tr_mul(&psi) * w);
            if s + 1 < len {
                psi = match &self.step {
                    None => self.err.a_eps.tr_mul(&psi),
                    Some(phi) => phi.tr_mul(&psi),
                };
            }
        }
        let traj = self.window.maximize(&cx, &cu)?;
        let dist = disturbance_support(&g_rows, self.sets)?;
        Ok(traj + dist)
    }
}

/// Δ⁽²⁾(θ) for one row θ of E_z or E_u (discrete time).
#[allow(clippy::too_many_arguments)]
pub fn delta2(
    err: &ErrorSystem,
    theta: &DVector<f64>,
    rom: &StateSpaceModel,
    xbar: &Polytope,
    sets: &ConstraintSets,
    tau: usize,
) -> Result<f64> {
    Delta2Problem::discrete(err, rom, xbar, sets, tau)?.solve(theta)
}

/// Δ⁽²⁾(θ) for a continuous-time error system with trapezoid quadrature.
#[allow(clippy::too_many_arguments)]
pub fn ct_delta2(
    err_ct: &ErrorSystem,
    theta: &DVector<f64>,
    rom_d: &StateSpaceModel,
    xbar: &Polytope,
    sets: &ConstraintSets,
    tau_seconds: f64,
    dt: f64,
) -> Result<f64> {
    Delta2Problem::continuous(err_ct, rom_d, xbar, sets, tau_seconds, dt)?.solve(theta)
}

/// ‖E A_ε^t B_ε‖₂ for t = 0..=t_max with E = [E_z; E_u].
pub fn norm_decay_profile(err: &ErrorSystem, t_max: usize) -> Vec<f64> {
    let mut r = err.e_stacked();
    let mut out = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        out.push(linalg::spectral_norm(&(&r * &err.b_eps)));
        if t < t_max {
            r = &r * &err.a_eps;
        }
    }
    out
}

/// Smallest τ with profile[τ] ≤ threshold.
pub fn tau_for_threshold(profile: &[f64], threshold: f64) -> Option<usize> {
    profile.iter().position(|&v| v <= threshold)
}

/// Relative size of each tightening with respect to the original constraint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TighteningSummary {
    /// max_i 100·Δ⁽¹⁾(e_i)/b_i over Z and U rows.
    pub r: f64,
    pub t_z_max: f64,
    pub t_z_min: f64,
    pub t_u_max: f64,
    pub t_u_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta1: f64,
    pub delta1_waived: bool,
    pub delta1_z: Vec<f64>,
    pub delta1_u: Vec<f64>,
    pub delta2_z: Vec<f64>,
    pub delta2_u: Vec<f64>,
    pub delta_z: Vec<f64>,
    pub delta_u: Vec<f64>,
    pub c_r: f64,
    pub c_omega: f64,
    pub m: f64,
    pub gamma: f64,
    pub decay_method: Option<DecayMethod>,
    pub tau: usize,
    pub eta_init: f64,
    pub xbar_lower: Vec<f64>,
    pub xbar_upper: Vec<f64>,
    pub decay_profile: Vec<f64>,
    pub tightening: TighteningSummary,
}

impl BoundReport {
    pub fn note(&self) -> &'static str {
        if self.delta1_waived {
            "Δ⁽²⁾-only, Δ⁽¹⁾ waived by large-τ argument"
        } else {
            "Δ⁽¹⁾ + Δ⁽²⁾"
        }
    }

    pub fn delta_z_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.delta_z.clone())
    }

    pub fn delta_u_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.delta_u.clone())
    }
}

/// Δ_i = ‖θ_iᵀG^{-1/2}‖₂Δ⁽¹⁾ + Δ⁽²⁾(θ_i) for each row θ_i of `e`.
pub fn combine_bounds(
    delta1: f64,
    g: Option<&DMatrix<f64>>,
    e: &DMatrix<f64>,
    delta2: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if delta2.len() != e.nrows() {
        return Err(RompcError::dims(format!(
            "{} Δ⁽²⁾ values for {} rows",
            delta2.len(),
            e.nrows()
        )));
    }
    let scale: Vec<f64> = match g {
        Some(g) if delta1 != 0.0 => {
            let l = linalg::cholesky(g, "G")?;
            (0..e.nrows())
                .map(|i| {
                    let y = l
                        .solve_lower_triangular(&e.row(i).transpose())
                        .expect("nonsingular factor");
                    y.norm() * delta1
                })
                .collect()
        }
        _ => vec![0.0; e.nrows()],
    };
    let total = scale.iter().zip(delta2).map(|(a, b)| a + b).collect();
    Ok((scale, total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayChoice {
    /// Lyapunov route up to the dense size limit, then eigen route, then waive Δ⁽¹⁾.
    Auto,
    Lyapunov {
        eta: Option<f64>,
    },
    Eigen,
    /// Waive Δ⁽¹⁾.
    Skip,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundOptions {
    pub tau: usize,
    pub eta_init: f64,
    /// Look-ahead for X̄, defaults to τ.
    pub i_bar: Option<usize>,
    pub decay: DecayChoice,
    /// Worker threads for the per-row LPs.
    pub jobs: usize,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions {
            tau: 100,
            eta_init: DEFAULT_ETA_INIT,
            i_bar: None,
            decay: DecayChoice::Auto,
            jobs: 1,
        }
    }
}

/// Full discrete-time bound computation for an error system whose E_z, E_u
/// rows correspond to the rows of Z and U.
pub fn error_bounds(
    err: &ErrorSystem,
    rom: &StateSpaceModel,
    sets: &ConstraintSets,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let tau = opts.tau;
    if err.e_z.nrows() != sets.z.num_rows() || err.e_u.nrows() != sets.u.num_rows() {
        return Err(RompcError::dims(
            "E_z/E_u rows must match the rows of Z and U",
        ));
    }
    let xbar = compute_xbar(
        rom,
        &sets.z,
        &sets.u,
        opts.i_bar.unwrap_or(tau).max(rom.n().saturating_sub(1)),
    )?;

    let ne = err.dim();
    let decay = match opts.decay {
        DecayChoice::Skip => None,
        DecayChoice::Eigen => Some(compute_decay_params(&err.a_eps, DecayMethod::Eigen)?),
        DecayChoice::Lyapunov { eta } => {
            let eta = match eta {
                Some(e) => e,
                None => default_lyapunov_eta(linalg::dense_spectral_radius(&err.a_eps)),
            };
            Some(compute_decay_params(
                &err.a_eps,
                DecayMethod::Lyapunov { eta },
            )?)
        }
        DecayChoice::Auto => auto_decay(&err.a_eps, ne),
    };

    let (delta1_value, c_r, c_w) = match &decay {
        Some(p) => {
            let (c_r, c_w) = compute_cr_cw(err, &xbar, sets, &p.g)?;
            (delta1(p, opts.eta_init, tau, c_r, c_w)?, c_r, c_w)
        }
        None => (0.0, f64::NAN, f64::NAN),
    };

    let problem = Delta2Problem::discrete(err, rom, &xbar, sets, tau)?;
    let e = err.e_stacked();
    let d2 = solve_rows(&problem, &e, opts.jobs)?;
    let nz = err.e_z.nrows();
    let g = decay.as_ref().map(|p| &p.g);
    let (d1_rows, total) = combine_bounds(delta1_value, g, &e, &d2)?;

    let (xl, xu) = xbar.as_box().expect("X̄ is a box");
    let mut report = BoundReport {
        delta1: delta1_value,
        delta1_waived: decay.is_none(),
        delta1_z: d1_rows[..nz].to_vec(),
        delta1_u: d1_rows[nz..].to_vec(),
        delta2_z: d2[..nz].to_vec(),
        delta2_u: d2[nz..].to_vec(),
        delta_z: total[..nz].to_vec(),
        delta_u: total[nz..].to_vec(),
        c_r,
        c_omega: c_w,
        m: decay.as_ref().map_or(f64::NAN, |p| p.m),
        gamma: decay.as_ref().map_or(f64::NAN, |p| p.gamma),
        decay_method: decay.as_ref().map(|p| p.method),
        tau,
        eta_init: opts.eta_init,
        xbar_lower: xl,
        xbar_upper: xu,
        decay_profile: norm_decay_profile(err, tau),
        tightening: TighteningSummary::default(),
    };
    report.tightening = tightening_summary(&report, &sets.z.b, &sets.u.b);
    Ok(report)
}

fn auto_decay(a_eps: &DMatrix<f64>, ne: usize) -> Option<DecayParameters> {
    if ne <= LYAPUNOV_MAX_DIM {
        let eta = default_lyapunov_eta(linalg::dense_spectral_radius(a_eps));
        match compute_decay_params(a_eps, DecayMethod::Lyapunov { eta }) {
            Ok(p) => return Some(p),
            Err(e) => warn!("Lyapunov decay certificate failed ({e}); trying the eigen route"),
        }
    }
    if ne <= EIGEN_MAX_DIM {
        match compute_decay_params(a_eps, DecayMethod::Eigen) {
            Ok(p) => return Some(p),
            Err(e) => warn!("eigen decay certificate failed ({e})"),
        }
    }
    warn!("no decay certificate for a {ne}-dimensional error system; waiving Δ⁽¹⁾");
    None
}

fn solve_rows(problem: &Delta2Problem, e: &DMatrix<f64>, jobs: usize) -> Result<Vec<f64>> {
    let rows: Vec<DVector<f64>> = (0..e.nrows()).map(|i| e.row(i).transpose()).collect();
    let jobs = jobs.max(1).min(rows.len().max(1));
    if jobs == 1 {
        return rows.iter().map(|t| problem.solve(t)).collect();
    }
    let chunk = rows.len().div_ceil(jobs);
    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = rows
            .chunks(chunk)
            .map(|c| {
                s.spawn(move || {
                    c.iter()
                        .map(|t| problem.solve(t))
                        .collect::<Result<Vec<f64>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bound worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(rows.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Tightening percentages relative to the original right-hand sides.
pub fn tightening_summary(
    report: &BoundReport,
    bz: &DVector<f64>,
    bu: &DVector<f64>,
) -> TighteningSummary {
    let pct = |d: &[f64], b: &DVector<f64>| -> Vec<f64> {
        d.iter().zip(b.iter()).map(|(d, b)| 100.0 * d / b).collect()
    };
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let tz = pct(&report.delta_z, bz);
    let tu = pct(&report.delta_u, bu);
    let rz = pct(&report.delta1_z, bz);
    let ru = pct(&report.delta1_u, bu);
    TighteningSummary {
        r: max(&rz).max(max(&ru)).max(0.0),
        t_z_max: max(&tz),
        t_z_min: min(&tz),
        t_u_max: max(&tu),
        t_u_min: min(&tu),
    }
}
