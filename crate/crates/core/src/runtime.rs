//! Online ROMPC loop, plant simulation, setpoint targets and ZOH discretization.

use std::time::Instant;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{QpSettings, RompcDesign};
use crate::error::{Result, RompcError};
use crate::geometry::{support_max, Polytope, Support};
use crate::linalg;
use crate::model::{StateSpaceModel, TimeDomain};
use crate::ocp::{solve_ocp, OcpSpec, Target};
use crate::problem::ProblemSpec;
use crate::solvers::{QpOptions, Status, WarmStart};

/// Zero-order-hold equivalent: A_d = e^{AΔt}, [B_d B_w,d] = ∫₀^Δt e^{As}[B B_w] ds,
/// both read off the exponential of the augmented matrix [[A, B, B_w], [0, 0, 0]].
pub fn zoh_discretize(model: &StateSpaceModel, dt: f64) -> Result<StateSpaceModel> {
    if model.is_discrete() {
        return Err(RompcError::invalid("model is already discrete"));
    }
    let (n, m) = (model.n(), model.m());
    let (ad, bd) = zoh_pair(&model.a, &hcat(&model.b, &model.bw), dt)?;
    StateSpaceModel::new(
        ad,
        bd.columns(0, m).into_owned(),
        Some(bd.columns(m, model.mw()).into_owned()),
        model.c.clone(),
        model.h.clone(),
        TimeDomain::Discrete { dt },
    )
    .inspect(|d| debug_assert_eq!(d.n(), n))
}

/// (e^{AΔt}, ∫₀^Δt e^{As} ds B).
pub fn zoh_pair(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(RompcError::invalid(format!(
            "sampling time must be positive, got {dt}"
        )));
    }
    let (n, m) = (a.nrows(), b.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, m)).copy_from(b);
    let e = linalg::matrix_exponential(&aug, dt);
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Startup,
    Rompc,
}

/// Controller memory: simulated ROM state, estimate and handover time.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub x_bar: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub k: usize,
    pub phase: Phase,
    pub k0: usize,
    pub warm: Option<WarmStart>,
    /// ū held between OCP solves in the continuous-time loop.
    pub u_bar_hold: Option<DVector<f64>>,
}

impl ControllerState {
    pub fn new(n: usize, k0: usize) -> Self {
        ControllerState {
            x_bar: DVector::zeros(n),
            x_hat: DVector::zeros(n),
            k: 0,
            phase: if k0 == 0 {
                Phase::Rompc
            } else {
                Phase::Startup
            },
            k0,
            warm: None,
            u_bar_hold: None,
        }
    }

    fn advance_phase(&mut self) {
        if self.phase == Phase::Startup && self.k >= self.k0 {
            debug!("handover to ROMPC at k = {}", self.k);
            self.phase = Phase::Rompc;
        }
    }
}

/// Input applied before the handover time k₀.
#[derive(Debug, Clone, PartialEq)]
pub enum StartupPolicy {
    Zero,
    /// u = u_ref + K_s(x̂ − x_ref).
    StaticGain {
        gain: DMatrix<f64>,
        x_ref: DVector<f64>,
        u_ref: DVector<f64>,
    },
    /// Open-loop inputs; the last entry is held past the end.
    OpenLoop(Vec<DVector<f64>>),
}

impl StartupPolicy {
    pub fn input(&self, k: usize, x_hat: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
        let u = match self {
            StartupPolicy::Zero => DVector::zeros(m),
            StartupPolicy::StaticGain { gain, x_ref, u_ref } => {
                if gain.shape() != (m, x_hat.len())
                    || x_ref.len() != x_hat.len()
                    || u_ref.len() != m
                {
                    return Err(RompcError::dims(
                        "static startup gain does not match the controller",
                    ));
                }
                u_ref + gain * (x_hat - x_ref)
            }
            StartupPolicy::OpenLoop(seq) => match seq.get(k).or(seq.last()) {
                Some(u) => u.clone(),
                None => DVector::zeros(m),
            },
        };
        if u.len() != m {
            return Err(RompcError::dims(format!(
                "startup input has length {} for m = {m}",
                u.len()
            )));
        }
        Ok(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcpInfo {
    pub status: Status,
    pub cost: f64,
    pub iterations: usize,
    pub solve_time: f64,
}

/// What one controller step produced, with the pre-update states.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub u: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub x_bar: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub phase: Phase,
    pub ocp: Option<OcpInfo>,
}

fn solve_step(
    state: &mut ControllerState,
    ocp: &OcpSpec,
    opts: &QpOptions,
) -> Result<(DVector<f64>, OcpInfo)> {
    let t0 = Instant::now();
    let sol = solve_ocp(ocp, &state.x_bar, state.warm.as_ref(), opts)?;
    let info = OcpInfo {
        status: sol.status.status,
        cost: sol.cost(),
        iterations: sol.status.iterations,
        solve_time: t0.elapsed().as_secs_f64(),
    };
    if !sol.is_feasible() {
        return Err(RompcError::Infeasible(format!(
            "OCP at step {} ended with status {:?}; x̄ = {:?}, x̂ = {:?}",
            state.k,
            info.status,
            state.x_bar.as_slice(),
            state.x_hat.as_slice()
        )));
    }
    state.warm = sol.shifted_warm_start(ocp);
    Ok((sol.u0, info))
}

/// One measure-then-act step: choose u_k from y_k, then advance the
/// estimator x̂⁺ = Ax̂ + Bu + L(y − Cx̂) and the simulated ROM x̄⁺ = Ax̄ + Bū.
pub fn rompc_step(
    state: &mut ControllerState,
    y: &DVector<f64>,
    design: &RompcDesign,
    ocp: &OcpSpec,
    startup: &StartupPolicy,
) -> Result<StepOutput> {
    let rom = &design.rom;
    if y.len() != rom.p() {
        return Err(RompcError::dims(format!(
            "measurement has length {} for p = {}",
            y.len(),
            rom.p()
        )));
    }
    state.advance_phase();
    let kdx = &design.k * (&state.x_hat - &state.x_bar);
    let (u, u_bar, info) = match state.phase {
        Phase::Startup => {
            let u = startup.input(state.k, &state.x_hat, rom.m())?;
            let u_bar = &u - &kdx;
            (u, u_bar, None)
        }
        Phase::Rompc => {
            let (u_bar, info) = solve_step(state, ocp, &design.qp.options())?;
            (&u_bar + &kdx, u_bar, Some(info))
        }
    };
    let out = StepOutput {
        u: u.clone(),
        u_bar: u_bar.clone(),
        x_bar: state.x_bar.clone(),
        x_hat: state.x_hat.clone(),
        phase: state.phase,
        ocp: info,
    };
    let innovation = y - &rom.c * &state.x_hat;
    state.x_hat = &rom.a * &state.x_hat + &rom.b * &u + &design.l * innovation;
    state.x_bar = &rom.a * &state.x_bar + &rom.b * &u_bar;
    state.k += 1;
    Ok(out)
}

/// Continuous-time controller: estimator and simulated ROM advanced by exact
/// ZOH maps over the control period, OCP solved every `ratio` periods.
#[derive(Debug, Clone)]
pub struct CtController {
    pub k: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub h: DMatrix<f64>,
    phi_hat: DMatrix<f64>,
    gam_hat: DMatrix<f64>,
    phi_bar: DMatrix<f64>,
    gam_bar: DMatrix<f64>,
    pub ocp: OcpSpec,
    pub ratio: usize,
    pub dt_ctrl: f64,
    pub qp: QpSettings,
}

impl CtController {
    /// `ocp` must be posed on the ZOH model of `rom` at `dt_ocp`.
    pub fn new(
        rom: &StateSpaceModel,
        k: &DMatrix<f64>,
        l: &DMatrix<f64>,
        ocp: OcpSpec,
        dt_ctrl: f64,
        dt_ocp: f64,
        qp: QpSettings,
    ) -> Result<Self> {
        if rom.is_discrete() {
            return Err(RompcError::invalid(
                "continuous-time controller needs a continuous-time model",
            ));
        }
        let (n, m, p) = (rom.n(), rom.m(), rom.p());
        if k.shape() != (m, n) || l.shape() != (n, p) || ocp.n() != n || ocp.m() != m {
            return Err(RompcError::dims(
                "gains or OCP do not match the reduced model",
            ));
        }
        if !(dt_ctrl > 0.0) || !(dt_ocp >= dt_ctrl) {
            return Err(RompcError::invalid("need 0 < dt_ctrl ≤ dt_ocp"));
        }
        let ratio_f = dt_ocp / dt_ctrl;
        let ratio = ratio_f.round() as usize;
        if (ratio_f - ratio as f64).abs() > 1e-9 * ratio_f {
            return Err(RompcError::invalid(format!(
                "dt_ocp = {dt_ocp} is not a multiple of dt_ctrl = {dt_ctrl}"
            )));
        }
        let a_est = &rom.a - l * &rom.c;
        let (phi_hat, gam_hat) = zoh_pair(&a_est, &hcat(&rom.b, l), dt_ctrl)?;
        let (phi_bar, gam_bar) = zoh_pair(&rom.a, &rom.b, dt_ctrl)?;
        Ok(CtController {
            k: k.clone(),
            c: rom.c.clone(),
            h: rom.h.clone(),
            phi_hat,
            gam_hat,
            phi_bar,
            gam_bar,
            ocp,
            ratio,
            dt_ctrl,
            qp,
        })
    }

    pub fn n(&self) -> usize {
        self.phi_bar.nrows()
    }

    pub fn m(&self) -> usize {
        self.k.nrows()
    }
}

/// Continuous-time counterpart of [`rompc_step`] over one control period.
pub fn rompc_step_ct(
    state: &mut ControllerState,
    y: &DVector<f64>,
    ctl: &CtController,
    startup: &StartupPolicy,
) -> Result<StepOutput> {
    let m = ctl.m();
    if y.len() != ctl.c.nrows() {
        return Err(RompcError::dims(format!(
            "measurement has length {} for p = {}",
            y.len(),
            ctl.c.nrows()
        )));
    }
    state.advance_phase();
    let kdx = &ctl.k * (&state.x_hat - &state.x_bar);
    let (u, u_bar, info) = match state.phase {
        Phase::Startup => {
            let u = startup.input(state.k, &state.x_hat, m)?;
            let u_bar = &u - &kdx;
            (u, u_bar, None)
        }
        Phase::Rompc => {
            let mut info = None;
            if (state.k - state.k0) % ctl.ratio == 0 || state.u_bar_hold.is_none() {
                let (u_bar, i) = solve_step(state, &ctl.ocp, &ctl.qp.options())?;
                state.u_bar_hold = Some(u_bar);
                info = Some(i);
            }
            let u_bar = state.u_bar_hold.clone().expect("held OCP input");
            (&u_bar + &kdx, u_bar, info)
        }
    };
    let out = StepOutput {
        u: u.clone(),
        u_bar: u_bar.clone(),
        x_bar: state.x_bar.clone(),
        x_hat: state.x_hat.clone(),
        phase: state.phase,
        ocp: info,
    };
    let mut uy = DVector::zeros(m + y.len());
    uy.rows_mut(0, m).copy_from(&u);
    uy.rows_mut(m, y.len()).copy_from(y);
    state.x_hat = &ctl.phi_hat * &state.x_hat + &ctl.gam_hat * uy;
    state.x_bar = &ctl.phi_bar * &state.x_bar + &ctl.gam_bar * &u_bar;
    state.k += 1;
    Ok(out)
}

/// Steady states for a setpoint r on Tz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointTarget {
    pub r: DVector<f64>,
    pub x_f_inf: DVector<f64>,
    pub u_inf: DVector<f64>,
    pub x_hat_inf: DVector<f64>,
    pub x_bar_inf: DVector<f64>,
    pub u_bar_inf: DVector<f64>,
}

impl SetpointTarget {
    pub fn rom_target(&self) -> Target {
        Target {
            x: self.x_bar_inf.clone(),
            u: self.u_bar_inf.clone(),
        }
    }
}

const SETPOINT_RESIDUAL: f64 = 1e-8;
const SETPOINT_MAX_COND: f64 = 1e14;

fn solve_checked(a: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let cond = linalg::condition_number(a);
    if !(cond < SETPOINT_MAX_COND) {
        return Err(RompcError::Singular(format!(
            "{what} is rank deficient (condition number {cond:e})"
        )));
    }
    let x = a
        .clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| RompcError::Singular(format!("{what} is singular")))?;
    let res = (a * &x - rhs).amax();
    let scale = 1.0 + a.amax() * x.amax() + rhs.amax();
    if res > SETPOINT_RESIDUAL * scale {
        return Err(RompcError::Singular(format!(
            "{what}: residual {res:e} exceeds tolerance"
        )));
    }
    Ok(x)
}

/// Solve the plant, estimator and simulated-ROM steady-state equations:
/// [[A^f − I, B^f], [TH^f, 0]](x^f∞, u∞) = (0, r);
/// x̂∞ = (I − (A − LC))⁻¹(Bu∞ + LC^f x^f∞);
/// [[A − I, B], [K, −I]](x̄∞, ū∞) = (0, Kx̂∞ − u∞).
pub fn setpoint_equations(
    fom: &StateSpaceModel,
    rom: &StateSpaceModel,
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    t_sel: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<SetpointTarget> {
    let (nf, n, m) = (fom.n(), rom.n(), fom.m());
    let t = t_sel.nrows();
    if t != m {
        return Err(RompcError::dims(format!(
            "{t} tracked variables for {m} inputs; the counts must agree"
        )));
    }
    if t_sel.ncols() != fom.o() || r.len() != t {
        return Err(RompcError::dims(
            "tracking selector or setpoint has the wrong size",
        ));
    }
    if k.shape() != (m, n) || l.shape() != (n, rom.p()) || rom.m() != m || rom.p() != fom.p() {
        return Err(RompcError::dims("gains do not match the models"));
    }
    let mut sf = DMatrix::zeros(nf + t, nf + m);
    sf.view_mut((0, 0), (nf, nf))
        .copy_from(&(&fom.a - DMatrix::identity(nf, nf)));
    sf.view_mut((0, nf), (nf, m)).copy_from(&fom.b);
    sf.view_mut((nf, 0), (t, nf)).copy_from(&(t_sel * &fom.h));
    let mut rhs = DVector::zeros(nf + t);
    rhs.rows_mut(nf, t).copy_from(r);
    let sol = solve_checked(&sf, &rhs, "S^f")?;
    let x_f_inf = sol.rows(0, nf).into_owned();
    let u_inf = sol.rows(nf, m).into_owned();

    let d_inv = DMatrix::identity(n, n) - (&rom.a - l * &rom.c);
    let x_hat_inf = solve_checked(
        &d_inv,
        &(&rom.b * &u_inf + l * (&fom.c * &x_f_inf)),
        "I − (A − LC)",
    )?;

    let mut s = DMatrix::zeros(n + m, n + m);
    s.view_mut((0, 0), (n, n))
        .copy_from(&(&rom.a - DMatrix::identity(n, n)));
    s.view_mut((0, n), (n, m)).copy_from(&rom.b);
    s.view_mut((n, 0), (m, n)).copy_from(k);
    s.view_mut((n, n), (m, m))
        .copy_from(&(-DMatrix::identity(m, m)));
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(n, m).copy_from(&(k * &x_hat_inf - &u_inf));
    let sol = solve_checked(&s, &rhs, "S")?;
    Ok(SetpointTarget {
        r: r.clone(),
        x_f_inf,
        u_inf,
        x_hat_inf,
        x_bar_inf: sol.rows(0, n).into_owned(),
        u_bar_inf: sol.rows(n, m).into_owned(),
    })
}

/// Setpoint targets for a design, checked against Z, U, Z̄ and Ū.
pub fn compute_setpoint_targets(
    fom: &StateSpaceModel,
    design: &RompcDesign,
    t_sel: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<SetpointTarget> {
    let sp = setpoint_equations(fom, &design.rom, &design.k, &design.l, t_sel, r)?;
    let (z, u) = design.original_sets();
    let checks = [
        ("Z", &z, &fom.h * &sp.x_f_inf),
        ("U", &u, sp.u_inf.clone()),
        ("Z̄", &design.zbar, &design.rom.h * &sp.x_bar_inf),
        ("Ū", &design.ubar, sp.u_bar_inf.clone()),
    ];
    let mut bad = Vec::new();
    for (name, set, v) in checks {
        let margin = -set.max_violation(&v);
        if margin < 0.0 {
            bad.push(format!("{name} margin {margin:.3e}"));
        }
    }
    if !bad.is_empty() {
        return Err(RompcError::Assumption(format!(
            "setpoint target violates constraints: {}",
            bad.join(", ")
        )));
    }
    Ok(sp)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbancePolicy {
    #[default]
    Zero,
    Uniform,
    Vertex,
}

const REJECTION_TRIES: usize = 10_000;
const VERTEX_CAP: u128 = 1 << 20;

/// Draws disturbance samples from a polytope.
#[derive(Debug, Clone)]
pub struct Sampler {
    policy: DisturbancePolicy,
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    is_box: bool,
    set: Polytope,
    vertices: Vec<DVector<f64>>,
}

impl Sampler {
    pub fn new(set: &Polytope, policy: DisturbancePolicy) -> Result<Self> {
        let dim = set.dim();
        let (lo, hi, is_box) = match set.as_box() {
            Some((lo, hi)) => (lo, hi, true),
            None => {
                let mut lo = vec![0.0; dim];
                let mut hi = vec![0.0; dim];
                for j in 0..dim {
                    let mut c = DVector::zeros(dim);
                    c[j] = 1.0;
                    hi[j] = bounded(support_max(&c, set)?)?;
                    c[j] = -1.0;
                    lo[j] = -bounded(support_max(&c, set)?)?;
                }
                (lo, hi, false)
            }
        };
        let vertices = if policy == DisturbancePolicy::Vertex && !is_box {
            set.vertices(VERTEX_CAP)?
        } else {
            Vec::new()
        };
        Ok(Sampler {
            policy,
            dim,
            lo,
            hi,
            is_box,
            set: set.clone(),
            vertices,
        })
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        match self.policy {
            DisturbancePolicy::Zero => Ok(DVector::zeros(self.dim)),
            DisturbancePolicy::Vertex if self.is_box => Ok(DVector::from_fn(self.dim, |j, _| {
                if rng.random_bool(0.5) {
                    self.hi[j]
                } else {
                    self.lo[j]
                }
            })),
            DisturbancePolicy::Vertex => {
                Ok(self.vertices[rng.random_range(0..self.vertices.len())].clone())
            }
            DisturbancePolicy::Uniform => {
                for _ in 0..REJECTION_TRIES {
                    let x = DVector::from_fn(self.dim, |j, _| {
                        self.lo[j] + (self.hi[j] - self.lo[j]) * rng.random::<f64>()
                    });
                    if self.is_box || self.set.contains(&x, 0.0)? {
                        return Ok(x);
                    }
                }
                Err(RompcError::invalid(
                    "uniform rejection sampling failed; the disturbance set is too thin",
                ))
            }
        }
    }
}

fn bounded(s: Support) -> Result<f64> {
    match s {
        Support::Bounded(v) => Ok(v),
        Support::Unbounded => Err(RompcError::UnboundedSet("disturbance set".into())),
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Total number of steps, startup included.
    pub steps: usize,
    /// Handover time; the design's k₀ when `None`.
    pub k0: Option<usize>,
    pub disturbance: DisturbancePolicy,
    pub x_f_init: Option<DVector<f64>>,
    pub seed: u64,
    pub setpoint: Option<DVector<f64>>,
    pub startup: StartupPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            steps: 400,
            k0: None,
            disturbance: DisturbancePolicy::Zero,
            x_f_init: None,
            seed: 0,
            setpoint: None,
            startup: StartupPolicy::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub x_bar: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub u: Vec<f64>,
    pub u_bar: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub z_bar: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub phase: Phase,
    pub ocp: Option<OcpInfo>,
    pub z_ok: bool,
    pub u_ok: bool,
}

impl StepRecord {
    pub fn status(&self) -> &'static str {
        match (self.phase, &self.ocp) {
            (Phase::Startup, _) => "startup",
            (Phase::Rompc, None) => "hold",
            (Phase::Rompc, Some(i)) => match i.status {
                Status::Optimal => "optimal",
                Status::Infeasible => "infeasible",
                Status::Unbounded => "unbounded",
                Status::MaxIter => "max_iter",
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub k0: usize,
    /// Performance output and input dimensions.
    pub o: usize,
    pub m: usize,
    pub records: Vec<StepRecord>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Steps at or after `from` where z ∉ Z or u ∉ U.
    pub fn violations(&self, from: usize) -> usize {
        self.records
            .iter()
            .filter(|r| r.k >= from && !(r.z_ok && r.u_ok))
            .count()
    }

    /// Row-wise maxima of H_z(z − z̄) and H_u(u − ū) over steps k ≥ `from`.
    pub fn tube_max(
        &self,
        hz: &DMatrix<f64>,
        hu: &DMatrix<f64>,
        from: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut mz = vec![f64::NEG_INFINITY; hz.nrows()];
        let mut mu = vec![f64::NEG_INFINITY; hu.nrows()];
        for r in self.records.iter().filter(|r| r.k >= from) {
            let dz =
                DVector::from_iterator(r.z.len(), r.z.iter().zip(&r.z_bar).map(|(a, b)| a - b));
            let du =
                DVector::from_iterator(r.u.len(), r.u.iter().zip(&r.u_bar).map(|(a, b)| a - b));
            for (m, v) in mz.iter_mut().zip((hz * dz).iter()) {
                *m = m.max(*v);
            }
            for (m, v) in mu.iter_mut().zip((hu * du).iter()) {
                *m = m.max(*v);
            }
        }
        (mz, mu)
    }
}

pub fn check_compatible(problem: &ProblemSpec, design: &RompcDesign) -> Result<()> {
    let (fom, rom) = (&problem.fom, &design.rom);
    if design.basis.full_dim() != fom.n()
        || rom.m() != fom.m()
        || rom.p() != fom.p()
        || rom.o() != fom.o()
    {
        return Err(RompcError::dims(format!(
            "design (n^f = {}, m = {}, p = {}, o = {}) does not fit the problem (n^f = {}, m = {}, p = {}, o = {})",
            design.basis.full_dim(),
            rom.m(),
            rom.p(),
            rom.o(),
            fom.n(),
            fom.m(),
            fom.p(),
            fom.o()
        )));
    }
    if design.zbar.num_rows() != problem.sets.z.num_rows()
        || design.ubar.num_rows() != problem.sets.u.num_rows()
    {
        return Err(RompcError::dims(
            "design tightening rows do not match the problem constraints",
        ));
    }
    Ok(())
}

/// ROM target and the plant's steady input for an optional setpoint.
fn resolve_target(
    problem: &ProblemSpec,
    design: &RompcDesign,
    setpoint: Option<&DVector<f64>>,
) -> Result<Target> {
    let rom = &design.rom;
    match setpoint {
        None => Ok(Target::origin(rom.n(), rom.m())),
        Some(r) => {
            let t_sel = design.tracking.as_ref().ok_or_else(|| {
                RompcError::invalid("setpoint given but the design has no tracking selector")
            })?;
            Ok(compute_setpoint_targets(&problem.fom, design, t_sel, r)?.rom_target())
        }
    }
}

/// Closed loop of the full-order plant x⁺ = A^f x + B^f u + B^f_w w,
/// y = C^f x + v under the ROMPC controller.
pub fn simulate_closed_loop(
    problem: &ProblemSpec,
    design: &RompcDesign,
    cfg: &SimConfig,
) -> Result<TrajectoryLog> {
    check_compatible(problem, design)?;
    let target = resolve_target(problem, design, cfg.setpoint.as_ref())?;
    let ocp = design.ocp_spec(&target)?;
    simulate_with_ocp(problem, design, &ocp, cfg)
}

/// As [`simulate_closed_loop`] with a prebuilt OCP.
pub fn simulate_with_ocp(
    problem: &ProblemSpec,
    design: &RompcDesign,
    ocp: &OcpSpec,
    cfg: &SimConfig,
) -> Result<TrajectoryLog> {
    check_compatible(problem, design)?;
    let fom = &problem.fom;
    let k0 = cfg.k0.unwrap_or(design.k0);
    let dt = match fom.time_domain {
        TimeDomain::Discrete { dt } => dt,
        TimeDomain::Continuous => {
            return Err(RompcError::invalid(
                "discrete closed loop needs a discrete-time plant",
            ))
        }
    };
    let sw = Sampler::new(&problem.sets.w, cfg.disturbance)?;
    let sv = Sampler::new(&problem.sets.v, cfg.disturbance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = match &cfg.x_f_init {
        Some(x) if x.len() == fom.n() => x.clone(),
        Some(x) => {
            return Err(RompcError::dims(format!(
                "initial plant state has length {} for n^f = {}",
                x.len(),
                fom.n()
            )))
        }
        None => DVector::zeros(fom.n()),
    };
    let mut state = ControllerState::new(design.rom.n(), k0);
    let mut records = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let w = sw.draw(&mut rng)?;
        let v = sv.draw(&mut rng)?;
        let y = &fom.c * &x + &v;
        let z = &fom.h * &x;
        let out = rompc_step(&mut state, &y, design, ocp, &cfg.startup)?;
        let z_bar = &design.rom.h * &out.x_bar;
        records.push(StepRecord {
            k,
            t: k as f64 * dt,
            z_ok: problem.sets.z.contains(&z, CONSTRAINT_SLACK)?,
            u_ok: problem.sets.u.contains(&out.u, CONSTRAINT_SLACK)?,
            x_bar: out.x_bar.as_slice().to_vec(),
            x_hat: out.x_hat.as_slice().to_vec(),
            u: out.u.as_slice().to_vec(),
            u_bar: out.u_bar.as_slice().to_vec(),
            y: y.as_slice().to_vec(),
            z: z.as_slice().to_vec(),
            z_bar: z_bar.as_slice().to_vec(),
            w: w.as_slice().to_vec(),
            v: v.as_slice().to_vec(),
            phase: out.phase,
            ocp: out.ocp,
        });
        x = &fom.a * &x + &fom.b * &out.u + &fom.bw * &w;
    }
    Ok(TrajectoryLog {
        dt,
        k0,
        o: fom.o(),
        m: fom.m(),
        records,
    })
}

/// Numerical slack for constraint membership checks.
pub const CONSTRAINT_SLACK: f64 = 1e-9;

/// Closed loop of a continuous-time plant, integrated exactly between
/// control instants (inputs and disturbances held over each period).
pub fn simulate_closed_loop_ct(
    problem: &ProblemSpec,
    ctl: &CtController,
    cfg: &SimConfig,
) -> Result<TrajectoryLog> {
    let fom = &problem.fom;
    if fom.is_discrete() {
        return Err(RompcError::invalid(
            "continuous-time closed loop needs a continuous-time plant",
        ));
    }
    if fom.m() != ctl.m() || fom.p() != ctl.c.nrows() {
        return Err(RompcError::dims("controller does not fit the plant"));
    }
    let plant = zoh_discretize(fom, ctl.dt_ctrl)?;
    let k0 = cfg.k0.unwrap_or(0);
    let sw = Sampler::new(&problem.sets.w, cfg.disturbance)?;
    let sv = Sampler::new(&problem.sets.v, cfg.disturbance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = cfg
        .x_f_init
        .clone()
        .unwrap_or_else(|| DVector::zeros(fom.n()));
    if x.len() != fom.n() {
        return Err(RompcError::dims("initial plant state has the wrong length"));
    }
    let mut state = ControllerState::new(ctl.n(), k0);
    let mut records = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let w = sw.draw(&mut rng)?;
        let v = sv.draw(&mut rng)?;
        let y = &fom.c * &x + &v;
        let z = &fom.h * &x;
        let out = rompc_step_ct(&mut state, &y, ctl, &cfg.startup)?;
        let z_bar = &ctl.h * &out.x_bar;
        records.push(StepRecord {
            k,
            t: k as f64 * ctl.dt_ctrl,
            z_ok: problem.sets.z.contains(&z, CONSTRAINT_SLACK)?,
            u_ok: problem.sets.u.contains(&out.u, CONSTRAINT_SLACK)?,
            x_bar: out.x_bar.as_slice().to_vec(),
            x_hat: out.x_hat.as_slice().to_vec(),
            u: out.u.as_slice().to_vec(),
            u_bar: out.u_bar.as_slice().to_vec(),
            y: y.as_slice().to_vec(),
            z: z.as_slice().to_vec(),
            z_bar: z_bar.as_slice().to_vec(),
            w: w.as_slice().to_vec(),
            v: v.as_slice().to_vec(),
            phase: out.phase,
            ocp: out.ocp,
        });
        x = &plant.a * &x + &plant.b * &out.u + &plant.bw * &w;
    }
    Ok(TrajectoryLog {
        dt: ctl.dt_ctrl,
        k0,
        o: fom.o(),
        m: fom.m(),
        records,
    })
}

/// Aggregate of a batch of closed-loop runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub runs: usize,
    pub steps: usize,
    pub k0: usize,
    /// Runs with at least one Z or U violation at k ≥ k₀.
    pub violating_runs: usize,
    pub violation_steps: usize,
    pub failed_runs: usize,
    pub failures: Vec<String>,
    /// Row-wise maxima of H_z(z − z̄), H_u(u − ū) over all runs, k ≥ k₀.
    pub tube_max_z: Vec<f64>,
    pub tube_max_u: Vec<f64>,
}

impl MonteCarloSummary {
    pub fn merge(&mut self, other: &MonteCarloSummary) {
        self.runs += other.runs;
        self.violating_runs += other.violating_runs;
        self.violation_steps += other.violation_steps;
        self.failed_runs += other.failed_runs;
        self.failures.extend(other.failures.iter().cloned());
        merge_max(&mut self.tube_max_z, &other.tube_max_z);
        merge_max(&mut self.tube_max_u, &other.tube_max_u);
    }

    pub fn is_clean(&self) -> bool {
        self.violating_runs == 0 && self.failed_runs == 0
    }
}

fn merge_max(acc: &mut Vec<f64>, other: &[f64]) {
    if acc.is_empty() {
        acc.extend_from_slice(other);
    } else {
        for (a, b) in acc.iter_mut().zip(other) {
            *a = a.max(*b);
        }
    }
}

/// `runs` closed loops with seeds `cfg.seed + i`, spread over `jobs` threads.
pub fn monte_carlo(
    problem: &ProblemSpec,
    design: &RompcDesign,
    cfg: &SimConfig,
    runs: usize,
    jobs: usize,
) -> Result<MonteCarloSummary> {
    check_compatible(problem, design)?;
    let target = resolve_target(problem, design, cfg.setpoint.as_ref())?;
    let ocp = design.ocp_spec(&target)?;
    let k0 = cfg.k0.unwrap_or(design.k0);
    let run_one = |i: usize| -> MonteCarloSummary {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i as u64);
        let mut s = MonteCarloSummary {
            runs: 1,
            steps: cfg.steps,
            k0,
            ..Default::default()
        };
        match simulate_with_ocp(problem, design, &ocp, &c) {
            Ok(log) => {
                let v = log.violations(k0);
                s.violation_steps = v;
                s.violating_runs = usize::from(v > 0);
                let (tz, tu) = log.tube_max(&problem.sets.z.h, &problem.sets.u.h, k0);
                s.tube_max_z = tz;
                s.tube_max_u = tu;
            }
            Err(e) => {
                s.failed_runs = 1;
                s.failures.push(format!("seed {}: {e}", c.seed));
            }
        }
        s
    };
    let jobs = jobs.clamp(1, runs.max(1));
    let parts: Vec<MonteCarloSummary> = if jobs == 1 {
        (0..runs).map(run_one).collect()
    } else {
        std::thread::scope(|sc| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let run_one = &run_one;
                    sc.spawn(move || (j..runs).step_by(jobs).map(run_one).collect::<Vec<_>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("simulation worker panicked"))
                .collect()
        })
    };
    let mut total = MonteCarloSummary {
        steps: cfg.steps,
        k0,
        ..Default::default()
    };
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}
