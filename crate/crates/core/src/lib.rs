//! Reduced order model predictive control (ROMPC) for high-dimensional linear
//! systems: model reduction, gain synthesis, error bounds, tube-tightened
//! optimal control and closed-loop simulation.

pub mod benchmarks;
pub mod bounds;
pub mod design;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ocp;
pub mod problem;
pub mod reduction;
pub mod runtime;
pub mod solvers;
pub mod synthesis;

pub use error::{Result, RompcError};
pub use model::{Dims, StateSpaceModel, TimeDomain};
