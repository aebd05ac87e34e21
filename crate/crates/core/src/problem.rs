//! Problem specification: plant, constraint and disturbance sets, costs and
//! the configuration of each offline and online stage.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{ConstraintSets, DecayChoice, DEFAULT_ETA_INIT};
use crate::error::{Result, RompcError};
use crate::geometry::{support_max, Polytope, Support};
use crate::linalg;
use crate::model::StateSpaceModel;
use crate::reduction::ProjectionBasis;
use crate::synthesis::DEFAULT_GAMMA_REG;

/// Full-order state weight Q^f.
#[derive(Debug, Clone, PartialEq)]
pub enum StateWeight {
    /// Q^f = H^fᵀW_zᵀW_zH^f, so the reduced weight is HᵀW_zᵀW_zH.
    Projected,
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub qf: StateWeight,
    pub r: DMatrix<f64>,
    pub wz: DMatrix<f64>,
    pub wu: DMatrix<f64>,
    pub gamma_reg: f64,
}

impl CostSpec {
    pub fn identity(o: usize, m: usize) -> Self {
        CostSpec {
            qf: StateWeight::Projected,
            r: DMatrix::identity(m, m),
            wz: DMatrix::identity(o, o),
            wu: DMatrix::identity(m, m),
            gamma_reg: DEFAULT_GAMMA_REG,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReductionMethod {
    /// Square-root balanced truncation of (A, [B B_w], [C; H]).
    BalancedTruncation,
    /// Keep the unstable modes, balance and truncate the stable part.
    StableSplit,
    /// User-supplied basis.
    Basis(ProjectionBasis),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionSpec {
    pub rom_dim: usize,
    pub method: ReductionMethod,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSpec {
    pub tau: usize,
    pub eta_init: f64,
    pub i_bar: Option<usize>,
    pub decay: DecayChoice,
}

impl Default for BoundSpec {
    fn default() -> Self {
        BoundSpec {
            tau: 100,
            eta_init: DEFAULT_ETA_INIT,
            i_bar: None,
            decay: DecayChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalMode {
    /// Maximal positively invariant set under the terminal LQR gain.
    Invariant,
    /// x̄_N = x̄_∞.
    Equality,
    /// Invariant set, falling back to the equality constraint when the set
    /// recursion fails.
    InvariantOrEquality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpConfig {
    pub horizon: usize,
    /// Tracking selector T (t×o) for setpoints on Tz.
    pub tracking: Option<DMatrix<f64>>,
    pub terminal: TerminalMode,
    /// Startup length k₀; defaults to 2τ.
    pub k0: Option<usize>,
}

impl Default for OcpConfig {
    fn default() -> Self {
        OcpConfig {
            horizon: 20,
            tracking: None,
            terminal: TerminalMode::InvariantOrEquality,
            k0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub fom: StateSpaceModel,
    pub sets: ConstraintSets,
    pub cost: CostSpec,
    pub reduction: ReductionSpec,
    pub bounds: BoundSpec,
    pub ocp: OcpConfig,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.fom.validate()?;
        let d = self.fom.dims();
        for (name, set, dim) in [
            ("Z", &self.sets.z, d.o),
            ("U", &self.sets.u, d.m),
            ("W", &self.sets.w, d.mw),
            ("V", &self.sets.v, d.p),
        ] {
            if set.dim() != dim {
                return Err(RompcError::dims(format!(
                    "{name} has dimension {} but the model needs {dim}",
                    set.dim()
                )));
            }
            check_compact_with_origin(name, set)?;
        }
        let c = &self.cost;
        if c.r.shape() != (d.m, d.m) || c.wu.ncols() != d.m || c.wz.ncols() != d.o {
            return Err(RompcError::dims(
                "cost matrices do not match the model dimensions",
            ));
        }
        if !linalg::is_positive_definite(&linalg::symmetrize(&c.r))
            || (&c.r - c.r.transpose()).amax() > 1e-12 * (1.0 + c.r.amax())
        {
            return Err(RompcError::NotPositiveDefinite(
                "R must be symmetric positive definite".into(),
            ));
        }
        if let StateWeight::Matrix(q) = &c.qf {
            if q.shape() != (d.n, d.n) {
                return Err(RompcError::dims(format!(
                    "Q^f is {:?}, expected {}x{}",
                    q.shape(),
                    d.n,
                    d.n
                )));
            }
        }
        if !(c.gamma_reg > 0.0) {
            return Err(RompcError::invalid("gamma_reg must be positive"));
        }
        if self.reduction.rom_dim == 0 || self.reduction.rom_dim > d.n {
            return Err(RompcError::invalid(format!(
                "ROM dimension must be in 1..={}",
                d.n
            )));
        }
        if self.ocp.horizon == 0 {
            return Err(RompcError::invalid("OCP horizon must be at least 1"));
        }
        if self.bounds.tau == 0 {
            return Err(RompcError::invalid("τ must be at least 1"));
        }
        if !(self.bounds.eta_init >= 0.0) {
            return Err(RompcError::invalid("eta_init must be nonnegative"));
        }
        if let Some(t) = &self.ocp.tracking {
            if t.ncols() != d.o {
                return Err(RompcError::dims(
                    "tracking selector must have one column per performance variable",
                ));
            }
        }
        Ok(())
    }

    /// Startup length k₀ (default 2τ).
    pub fn k0(&self) -> usize {
        self.ocp.k0.unwrap_or(2 * self.bounds.tau)
    }
}

/// Compactness (every coordinate bounded both ways) and origin membership.
pub fn check_compact_with_origin(name: &str, set: &Polytope) -> Result<()> {
    let d = set.dim();
    if d == 0 {
        return Ok(());
    }
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(d);
            c[j] = sign;
            match support_max(&c, set)? {
                Support::Bounded(_) => {}
                Support::Unbounded => {
                    return Err(RompcError::UnboundedSet(format!(
                        "unbounded constraint set {name}: coordinate {} has no {} bound",
                        j + 1,
                        if sign > 0.0 { "upper" } else { "lower" }
                    )))
                }
            }
        }
    }
    if set.b.iter().any(|&b| b < 0.0) {
        return Err(RompcError::Assumption(format!(
            "constraint set {name} must contain the origin"
        )));
    }
    Ok(())
}
