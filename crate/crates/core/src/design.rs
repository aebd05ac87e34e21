//! Offline synthesis: reduction, gains, error bounds, tightening and terminal
//! ingredients, collected into a [`RompcDesign`].

use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{error_bounds, BoundOptions, BoundReport, DecayChoice};
use crate::error::{Result, RompcError};
use crate::geometry::Polytope;
use crate::linalg;
use crate::model::StateSpaceModel;
use crate::ocp::{regularize_weight, terminal_ingredients, OcpSpec, Target, TerminalConstraint};
use crate::problem::{ProblemSpec, ReductionMethod, StateWeight, TerminalMode};
use crate::reduction::{
    balanced_truncation, petrov_galerkin_project, relative_h2_error, split_and_truncate,
    ProjectionBasis, MARGINAL_TOL,
};
use crate::solvers::QpOptions;
use crate::synthesis::{assemble_error_system, riccati_gains, ErrorSystem, SynthesisWeights};

/// QP tolerances stored with a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            eps_abs: 1e-9,
            eps_rel: 1e-9,
            max_iter: 50_000,
        }
    }
}

impl QpSettings {
    pub fn options(&self) -> QpOptions {
        QpOptions {
            eps_abs: self.eps_abs,
            eps_rel: self.eps_rel,
            max_iter: self.max_iter,
            ..QpOptions::default()
        }
    }
}

/// Everything the online controller needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RompcDesign {
    pub rom: StateSpaceModel,
    pub basis: ProjectionBasis,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub k_f: DMatrix<f64>,
    /// Terminal set around the origin target; `None` means x̄_N = x̄_∞.
    pub terminal_set: Option<Polytope>,
    pub terminal_mode: TerminalMode,
    pub delta_z: DVector<f64>,
    pub delta_u: DVector<f64>,
    pub zbar: Polytope,
    pub ubar: Polytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    /// Startup length k₀.
    pub k0: usize,
    pub tracking: Option<DMatrix<f64>>,
    pub qp: QpSettings,
    pub rho_a_eps: f64,
}

impl RompcDesign {
    pub fn validate(&self) -> Result<()> {
        self.rom.validate()?;
        let (n, m, p) = (self.rom.n(), self.rom.m(), self.rom.p());
        if self.k.shape() != (m, n) || self.l.shape() != (n, p) || self.k_f.shape() != (m, n) {
            return Err(RompcError::dims(
                "design gains do not match the reduced model",
            ));
        }
        if self.p.shape() != (n, n) || self.q.shape() != (n, n) || self.r.shape() != (m, m) {
            return Err(RompcError::dims(
                "design weights do not match the reduced model",
            ));
        }
        if self.basis.rom_dim() != n {
            return Err(RompcError::dims(
                "basis width differs from the reduced dimension",
            ));
        }
        if self.delta_z.len() != self.zbar.num_rows() || self.delta_u.len() != self.ubar.num_rows()
        {
            return Err(RompcError::dims(
                "tightening vectors do not match the tightened sets",
            ));
        }
        if self.zbar.dim() != self.rom.o() || self.ubar.dim() != m {
            return Err(RompcError::dims(
                "tightened sets do not match the reduced model",
            ));
        }
        if let Some(i) = self
            .delta_z
            .iter()
            .chain(self.delta_u.iter())
            .position(|&d| !(d >= 0.0))
        {
            return Err(RompcError::invalid(format!(
                "tightening entry {i} is negative or NaN"
            )));
        }
        if !linalg::is_positive_definite(&linalg::symmetrize(&self.p)) {
            return Err(RompcError::NotPositiveDefinite("terminal cost P".into()));
        }
        if let Some(x_f) = &self.terminal_set {
            if x_f.dim() != n {
                return Err(RompcError::dims(
                    "terminal set dimension differs from the reduced dimension",
                ));
            }
        }
        if self.horizon == 0 {
            return Err(RompcError::invalid("horizon must be at least 1"));
        }
        Ok(())
    }

    /// Original constraint sets Z = Z̄ ⊕ Δ_z and U = Ū ⊕ Δ_u.
    pub fn original_sets(&self) -> (Polytope, Polytope) {
        let z = Polytope {
            h: self.zbar.h.clone(),
            b: &self.zbar.b + &self.delta_z,
            label: self.zbar.label.clone(),
        };
        let u = Polytope {
            h: self.ubar.h.clone(),
            b: &self.ubar.b + &self.delta_u,
            label: self.ubar.label.clone(),
        };
        (z, u)
    }

    /// OCP regulating to `target`. The stored terminal set is reused for the
    /// origin; other targets get their own invariant set.
    pub fn ocp_spec(&self, target: &Target) -> Result<OcpSpec> {
        let at_origin = target.x.amax() == 0.0 && target.u.amax() == 0.0;
        let terminal = if at_origin {
            match &self.terminal_set {
                Some(s) => TerminalConstraint::Set(s.clone()),
                None => TerminalConstraint::Equality,
            }
        } else {
            terminal_constraint(
                &self.rom,
                &self.q,
                &self.r,
                &self.zbar,
                &self.ubar,
                target,
                self.terminal_mode,
            )?
            .1
        };
        let spec = OcpSpec {
            a: self.rom.a.clone(),
            b: self.rom.b.clone(),
            h: self.rom.h.clone(),
            zbar: self.zbar.clone(),
            ubar: self.ubar.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
            p: self.p.clone(),
            k_f: self.k_f.clone(),
            terminal,
            horizon: self.horizon,
            target: target.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Terminal constraint for a target according to the configured mode.
pub fn terminal_constraint(
    rom: &StateSpaceModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    zbar: &Polytope,
    ubar: &Polytope,
    target: &Target,
    mode: TerminalMode,
) -> Result<(DMatrix<f64>, TerminalConstraint, DMatrix<f64>)> {
    if mode == TerminalMode::Equality {
        let p = linalg::symmetrize(&linalg::solve_dare(&rom.a, &rom.b, q, r)?);
        let k_f = linalg::dare_gain(&rom.a, &rom.b, r, &p)?;
        return Ok((p, TerminalConstraint::Equality, k_f));
    }
    match terminal_ingredients(rom, q, r, zbar, ubar, target) {
        Ok(ti) => Ok((ti.p, TerminalConstraint::Set(ti.x_f), ti.k_f)),
        Err(e @ RompcError::NotConverged { .. }) if mode == TerminalMode::InvariantOrEquality => {
            warn!("{e}; using the terminal equality constraint");
            let p = linalg::symmetrize(&linalg::solve_dare(&rom.a, &rom.b, q, r)?);
            let k_f = linalg::dare_gain(&rom.a, &rom.b, r, &p)?;
            Ok((p, TerminalConstraint::Equality, k_f))
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SynthOptions {
    pub jobs: usize,
    pub skip_delta1: bool,
}

/// Offline stage names and timings plus the diagnostics shown in reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub nf: usize,
    pub n: usize,
    pub rho_a_eps: f64,
    pub rel_h2_error: Option<f64>,
    pub hankel_singular_values: Vec<f64>,
    pub bounds: BoundReport,
    pub terminal_rows: Option<usize>,
    pub timings: Vec<(String, f64)>,
}

/// Stages of the offline pipeline, used to name failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Reduction,
    Gains,
    Bounds,
    Tightening,
    Terminal,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Reduction => "reduction",
            Stage::Gains => "gain synthesis",
            Stage::Bounds => "error bounds",
            Stage::Tightening => "constraint tightening",
            Stage::Terminal => "terminal ingredients",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: RompcError,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn at<T>(stage: Stage, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage, source })
}

/// Reduced model, basis, Hankel singular values and the reduced state weight.
pub fn reduce(
    spec: &ProblemSpec,
) -> Result<(StateSpaceModel, ProjectionBasis, Vec<f64>, DMatrix<f64>)> {
    let fom = &spec.fom;
    let n = spec.reduction.rom_dim;
    let (basis, hsv) = match &spec.reduction.method {
        ReductionMethod::BalancedTruncation => balanced_truncation(fom, n)?,
        ReductionMethod::StableSplit => {
            let unstable = linalg::eigenvalues(&fom.a)
                .iter()
                .filter(|l| {
                    if fom.is_discrete() {
                        l.norm() >= 1.0 - MARGINAL_TOL
                    } else {
                        l.re >= -MARGINAL_TOL
                    }
                })
                .count();
            if unstable > n {
                return Err(RompcError::invalid(format!(
                    "{unstable} unstable modes do not fit in a ROM of dimension {n}"
                )));
            }
            split_and_truncate(fom, n - unstable, MARGINAL_TOL)?
        }
        ReductionMethod::Basis(b) => (b.clone(), Vec::new()),
    };
    let qf = match &spec.cost.qf {
        StateWeight::Matrix(q) => Some(q),
        StateWeight::Projected => None,
    };
    let (rom, q) = petrov_galerkin_project(fom, &basis, qf)?;
    let q = match q {
        Some(q) => q,
        None => {
            let wzh = &spec.cost.wz * &rom.h;
            wzh.transpose() * wzh
        }
    };
    Ok((rom, basis, hsv, regularize_weight(&q, spec.cost.gamma_reg)))
}

/// Full discrete-time offline pipeline.
pub fn synthesize(
    spec: &ProblemSpec,
    opts: &SynthOptions,
) -> std::result::Result<(RompcDesign, SynthesisReport), StageError> {
    at(Stage::Reduction, spec.validate())?;
    if !spec.fom.is_discrete() {
        return Err(StageError {
            stage: Stage::Reduction,
            source: RompcError::invalid("the discrete pipeline needs a discrete-time model; discretize with a zero-order hold first"),
        });
    }
    let mut timings = Vec::new();
    let t0 = Instant::now();
    let (rom, basis, hsv, q) = at(Stage::Reduction, reduce(spec))?;
    let rel_h2 = relative_h2_error(&spec.fom, &rom).ok();
    timings.push(("reduction".to_string(), t0.elapsed().as_secs_f64()));

    let t0 = Instant::now();
    let weights = SynthesisWeights {
        wz: spec.cost.wz.clone(),
        wu: spec.cost.wu.clone(),
        gamma_reg: spec.cost.gamma_reg,
    };
    let gains = at(
        Stage::Gains,
        riccati_gains(&spec.fom, &rom, &basis, &weights),
    )?;
    info!(
        "gains: spectral radius of the error dynamics {:.6}",
        gains.rho_a_eps
    );
    timings.push(("gains".to_string(), t0.elapsed().as_secs_f64()));

    let t0 = Instant::now();
    let err = at(
        Stage::Bounds,
        assemble_error_system(
            &spec.fom,
            &rom,
            &basis,
            &gains.k,
            &gains.l,
            &spec.sets.z.h,
            &spec.sets.u.h,
        ),
    )?;
    let report = at(Stage::Bounds, bounds_for(spec, &err, &rom, opts))?;
    timings.push(("bounds".to_string(), t0.elapsed().as_secs_f64()));

    let t0 = Instant::now();
    let delta_z = report.delta_z_vec();
    let delta_u = report.delta_u_vec();
    let zbar = at(Stage::Tightening, spec.sets.z.tighten(&delta_z))?;
    let ubar = at(Stage::Tightening, spec.sets.u.tighten(&delta_u))?;
    timings.push(("tightening".to_string(), t0.elapsed().as_secs_f64()));

    let t0 = Instant::now();
    let target = Target::origin(rom.n(), rom.m());
    let (p, terminal, k_f) = at(
        Stage::Terminal,
        terminal_constraint(
            &rom,
            &q,
            &spec.cost.r,
            &zbar,
            &ubar,
            &target,
            spec.ocp.terminal,
        ),
    )?;
    timings.push(("terminal".to_string(), t0.elapsed().as_secs_f64()));
    let terminal_set = match terminal {
        TerminalConstraint::Set(s) => Some(s),
        TerminalConstraint::Equality => None,
    };

    let design = RompcDesign {
        basis,
        k: gains.k,
        l: gains.l,
        p,
        k_f,
        terminal_set,
        terminal_mode: spec.ocp.terminal,
        delta_z,
        delta_u,
        zbar,
        ubar,
        q,
        r: spec.cost.r.clone(),
        horizon: spec.ocp.horizon,
        k0: spec.k0(),
        tracking: spec.ocp.tracking.clone(),
        qp: QpSettings::default(),
        rho_a_eps: gains.rho_a_eps,
        rom,
    };
    let synth = SynthesisReport {
        nf: spec.fom.n(),
        n: design.rom.n(),
        rho_a_eps: gains.rho_a_eps,
        rel_h2_error: rel_h2,
        hankel_singular_values: hsv,
        bounds: report,
        terminal_rows: design.terminal_set.as_ref().map(|s| s.num_rows()),
        timings,
    };
    Ok((design, synth))
}

fn bounds_for(
    spec: &ProblemSpec,
    err: &ErrorSystem,
    rom: &StateSpaceModel,
    opts: &SynthOptions,
) -> Result<BoundReport> {
    let bopts = BoundOptions {
        tau: spec.bounds.tau,
        eta_init: spec.bounds.eta_init,
        i_bar: spec.bounds.i_bar,
        decay: if opts.skip_delta1 {
            DecayChoice::Skip
        } else {
            spec.bounds.decay
        },
        jobs: opts.jobs.max(1),
    };
    error_bounds(err, rom, &spec.sets, &bopts)
}

/// Rerun the bound stage for an existing design (new τ or η), retightening
/// and recomputing the terminal ingredients.
pub fn rebound(
    spec: &ProblemSpec,
    design: &RompcDesign,
    opts: &SynthOptions,
) -> std::result::Result<(RompcDesign, BoundReport), StageError> {
    let err = at(
        Stage::Bounds,
        assemble_error_system(
            &spec.fom,
            &design.rom,
            &design.basis,
            &design.k,
            &design.l,
            &spec.sets.z.h,
            &spec.sets.u.h,
        ),
    )?;
    let report = at(Stage::Bounds, bounds_for(spec, &err, &design.rom, opts))?;
    let mut out = design.clone();
    out.delta_z = report.delta_z_vec();
    out.delta_u = report.delta_u_vec();
    out.zbar = at(Stage::Tightening, spec.sets.z.tighten(&out.delta_z))?;
    out.ubar = at(Stage::Tightening, spec.sets.u.tighten(&out.delta_u))?;
    let target = Target::origin(out.rom.n(), out.rom.m());
    let (p, terminal, k_f) = at(
        Stage::Terminal,
        terminal_constraint(
            &out.rom,
            &out.q,
            &out.r,
            &out.zbar,
            &out.ubar,
            &target,
            out.terminal_mode,
        ),
    )?;
    out.p = p;
    out.k_f = k_f;
    out.terminal_set = match terminal {
        TerminalConstraint::Set(s) => Some(s),
        TerminalConstraint::Equality => None,
    };
    out.k0 = spec.k0();
    Ok((out, report))
}
