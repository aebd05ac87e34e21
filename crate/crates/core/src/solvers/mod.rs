//! Embedded convex solvers: dense revised simplex for LPs and an
//! operator-splitting method for strictly convex QPs.

pub mod dual_simplex;
pub mod lp;
pub mod qp;

use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use dual_simplex::DualSimplex;
pub use lp::{solve_lp, LinearProgram, LpOptions};
pub use qp::{solve_qp, QpOptions, QpResult, QuadraticProgram, WarmStart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SolveStatus {
    pub status: Status,
    pub objective: f64,
    /// Present iff the status is `Optimal` or `MaxIter`.
    pub x: Option<DVector<f64>>,
    pub iterations: usize,
    pub solve_time: Duration,
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub(crate) fn without_point(status: Status, iterations: usize, solve_time: Duration) -> Self {
        let objective = match status {
            Status::Unbounded => f64::INFINITY,
            _ => f64::NAN,
        };
        SolveStatus {
            status,
            objective,
            x: None,
            iterations,
            solve_time,
        }
    }
}
