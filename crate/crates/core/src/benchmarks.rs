//! Self-generated benchmark problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{ConstraintSets, DecayChoice, DEFAULT_ETA_INIT};
use crate::error::{Result, RompcError};
use crate::geometry::Polytope;
use crate::model::{StateSpaceModel, TimeDomain};
use crate::problem::{
    BoundSpec, CostSpec, OcpConfig, ProblemSpec, ReductionMethod, ReductionSpec, TerminalMode,
};
use crate::runtime::zoh_discretize;

/// 1-D heat equation T_t = αT_xx on (0, 1) with the left boundary
/// temperature as control input and T(1) = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatConfig {
    /// Interior grid points (full-order dimension).
    pub nf: usize,
    pub alpha: f64,
    pub dt: f64,
    pub rom_dim: usize,
    /// Uniform heat source on this interval, scaled by w.
    pub source: (f64, f64),
    /// Performance locations (z).
    pub z_at: Vec<f64>,
    /// Sensor locations (y).
    pub y_at: Vec<f64>,
    pub z_bound: f64,
    pub u_bound: f64,
    pub w_bound: f64,
    pub v_bound: f64,
    pub tau: usize,
    pub horizon: usize,
}

impl Default for HeatConfig {
    fn default() -> Self {
        HeatConfig {
            nf: 200,
            alpha: 1.0,
            dt: 0.01,
            rom_dim: 10,
            source: (0.4, 0.6),
            z_at: vec![0.1, 0.3, 0.5, 0.7],
            y_at: vec![0.2, 0.6],
            z_bound: 0.5,
            u_bound: 1.0,
            w_bound: 0.5,
            v_bound: 1e-3,
            tau: 300,
            horizon: 20,
        }
    }
}

fn grid_index(x: f64, nf: usize) -> usize {
    let h = 1.0 / (nf as f64 + 1.0);
    ((x / h).round() as usize).clamp(1, nf) - 1
}

/// Continuous-time semi-discretization (central differences).
pub fn heat_model_ct(cfg: &HeatConfig) -> Result<StateSpaceModel> {
    let nf = cfg.nf;
    if nf < 2 {
        return Err(RompcError::invalid(
            "heat benchmark needs at least 2 grid points",
        ));
    }
    let h = 1.0 / (nf as f64 + 1.0);
    let k = cfg.alpha / (h * h);
    let mut a = DMatrix::zeros(nf, nf);
    for i in 0..nf {
        a[(i, i)] = -2.0 * k;
        if i > 0 {
            a[(i, i - 1)] = k;
        }
        if i + 1 < nf {
            a[(i, i + 1)] = k;
        }
    }
    let mut b = DMatrix::zeros(nf, 1);
    b[(0, 0)] = k;
    let bw = DMatrix::from_fn(nf, 1, |i, _| {
        let x = (i as f64 + 1.0) * h;
        if x >= cfg.source.0 && x <= cfg.source.1 {
            1.0
        } else {
            0.0
        }
    });
    let selector = |pts: &[f64]| {
        let mut m = DMatrix::zeros(pts.len(), nf);
        for (r, &x) in pts.iter().enumerate() {
            m[(r, grid_index(x, nf))] = 1.0;
        }
        m
    };
    StateSpaceModel::new(
        a,
        b,
        Some(bw),
        selector(&cfg.y_at),
        selector(&cfg.z_at),
        TimeDomain::Continuous,
    )
}

/// Discrete-time heat benchmark problem (ZOH at `dt`) with box constraints.
pub fn heat_problem(cfg: &HeatConfig) -> Result<ProblemSpec> {
    let fom = zoh_discretize(&heat_model_ct(cfg)?, cfg.dt)?;
    let (o, p) = (cfg.z_at.len(), cfg.y_at.len());
    let sets = ConstraintSets {
        z: Polytope::symmetric_box(&vec![cfg.z_bound; o])?.with_label("Z"),
        u: Polytope::symmetric_box(&[cfg.u_bound])?.with_label("U"),
        w: Polytope::symmetric_box(&[cfg.w_bound])?.with_label("W"),
        v: Polytope::symmetric_box(&vec![cfg.v_bound; p])?.with_label("V"),
    };
    let mut tracking = DMatrix::zeros(1, o);
    tracking[(0, 0)] = 1.0;
    let spec = ProblemSpec {
        fom,
        sets,
        cost: CostSpec::identity(o, 1),
        reduction: ReductionSpec {
            rom_dim: cfg.rom_dim,
            method: ReductionMethod::BalancedTruncation,
        },
        bounds: BoundSpec {
            tau: cfg.tau,
            eta_init: DEFAULT_ETA_INIT,
            i_bar: None,
            decay: DecayChoice::Auto,
        },
        ocp: OcpConfig {
            horizon: cfg.horizon,
            tracking: Some(tracking),
            terminal: TerminalMode::InvariantOrEquality,
            k0: None,
        },
    };
    spec.validate()?;
    Ok(spec)
}

/// Zero-disturbance copy of a problem (W = V = {0}).
pub fn without_disturbances(spec: &ProblemSpec) -> Result<ProblemSpec> {
    let mut s = spec.clone();
    let zero = |d: usize| Polytope::from_box(&vec![0.0; d], &vec![0.0; d]);
    s.sets.w = zero(spec.fom.mw())?.with_label("W");
    s.sets.v = zero(spec.fom.p())?.with_label("V");
    Ok(s)
}

/// Steady-state profile check helper: temperatures for a constant boundary value.
pub fn heat_steady_state(cfg: &HeatConfig, u: f64) -> DVector<f64> {
    let h = 1.0 / (cfg.nf as f64 + 1.0);
    DVector::from_fn(cfg.nf, |i, _| u * (1.0 - (i as f64 + 1.0) * h))
}
