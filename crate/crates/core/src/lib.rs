//! Batched nonlinear trajectory optimization.
//!
//! Each problem is solved by sequential quadratic programming: the QP at
//! every iterate is reduced to a block-tridiagonal Schur complement in the
//! dynamics multipliers, solved with preconditioned conjugate gradient, and
//! the resulting step is globalized by an exhaustive merit-function line
//! search with adaptive damping. Batches of independent problems run on a
//! bounded worker pool with results that do not depend on scheduling.

/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod batch;
pub mod blocktri;
pub mod dynamics;
pub mod error;
pub mod mpc;
pub mod qpform;
pub mod sqp;
pub mod verify;

pub use blocktri::{pcg, BlockTriMatrix, PcgResult, PcgSettings};
pub use dynamics::{DynamicsModel, ExternalForce, PlantConfig};
pub use error::{Error, Result};
pub use qpform::{CostSpec, ProblemSpec, Reference, StepDirection, Trajectory};
pub use sqp::{sqp_solve, LineSearchSettings, SolverSettings, SqpResult, TraceRecord};
pub use batch::{batch_solve, BatchEngine, BatchItem, BatchResult, BatchSpec};
