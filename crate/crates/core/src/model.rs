use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RompcError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeDomain {
    Discrete { dt: f64 },
    Continuous,
}

impl TimeDomain {
    pub fn is_discrete(&self) -> bool {
        matches!(self, TimeDomain::Discrete { .. })
    }
}

/// State, input, measurement, performance and disturbance dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub o: usize,
    pub mw: usize,
}

/// Linear time-invariant system
///
/// ```text
/// x⁺ = A x + B u + B_w w,   y = C x + v,   z = H x
/// ```
///
/// (with x⁺ read as ẋ in continuous time). Used for the full-order plant and
/// for reduced-order models alike.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub time_domain: TimeDomain,
}

impl StateSpaceModel {
    /// Build and validate a model. A missing `bw` means no disturbance input.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        bw: Option<DMatrix<f64>>,
        c: DMatrix<f64>,
        h: DMatrix<f64>,
        time_domain: TimeDomain,
    ) -> Result<Self> {
        let n = a.nrows();
        let bw = bw.unwrap_or_else(|| DMatrix::zeros(n, 0));
        let model = StateSpaceModel {
            a,
            b,
            bw,
            c,
            h,
            time_domain,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(RompcError::dims(format!(
                "A must be square, got {}x{}",
                n,
                self.a.ncols()
            )));
        }
        for (name, rows, cols, want_rows) in [
            ("B", self.b.nrows(), self.b.ncols(), true),
            ("B_w", self.bw.nrows(), self.bw.ncols(), true),
            ("C", self.c.ncols(), self.c.nrows(), false),
            ("H", self.h.ncols(), self.h.nrows(), false),
        ] {
            if rows != n {
                let shape = if want_rows {
                    format!("{rows}x{cols}")
                } else {
                    format!("{cols}x{rows}")
                };
                return Err(RompcError::dims(format!(
                    "{name} is {shape} but A is {n}x{n}"
                )));
            }
        }
        if let TimeDomain::Discrete { dt } = self.time_domain {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(RompcError::invalid(format!(
                    "sample time must be positive, got {dt}"
                )));
            }
        }
        for (name, m) in [
            ("A", &self.a),
            ("B", &self.b),
            ("B_w", &self.bw),
            ("C", &self.c),
            ("H", &self.h),
        ] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(RompcError::invalid(format!(
                    "{name} has non-finite entries"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.a.nrows(),
            m: self.b.ncols(),
            p: self.c.nrows(),
            o: self.h.nrows(),
            mw: self.bw.ncols(),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn o(&self) -> usize {
        self.h.nrows()
    }

    pub fn mw(&self) -> usize {
        self.bw.ncols()
    }

    pub fn is_discrete(&self) -> bool {
        self.time_domain.is_discrete()
    }

    pub fn dt(&self) -> Option<f64> {
        match self.time_domain {
            TimeDomain::Discrete { dt } => Some(dt),
            TimeDomain::Continuous => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shapes() {
        let r = StateSpaceModel::new(
            DMatrix::zeros(3, 2),
            DMatrix::zeros(3, 1),
            None,
            DMatrix::zeros(1, 3),
            DMatrix::zeros(1, 3),
            TimeDomain::Discrete { dt: 1.0 },
        );
        assert!(matches!(r, Err(RompcError::DimensionMismatch(_))));
        let r = StateSpaceModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            None,
            DMatrix::zeros(1, 3),
            DMatrix::zeros(1, 2),
            TimeDomain::Discrete { dt: 1.0 },
        );
        assert!(r.is_err());
    }

    #[test]
    fn dims_and_default_disturbance() {
        let m = StateSpaceModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            None,
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 2),
            TimeDomain::Continuous,
        )
        .unwrap();
        assert_eq!(
            m.dims(),
            Dims {
                n: 2,
                m: 1,
                p: 1,
                o: 1,
                mw: 0
            }
        );
        assert!(!m.is_discrete());
    }
}
