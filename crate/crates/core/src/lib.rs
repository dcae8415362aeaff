//! Two-time-scale stochastic approximation for coupled root-finding
//! problems: the iteration itself, its Lyapunov diagnostics, the constants
//! and step-size conditions of its finite-time analysis, and empirical
//! checks of the resulting bounds.

// `!(v > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod ode;
pub mod operators;
pub mod schedules;
pub mod solver;

pub use error::{Error, Result};
pub use noise::{build_noise, Gammas, NoiseModel, RngState};
pub use operators::{make_builtin, residuals, Builtin, ProblemConstants, ProblemSpec};
pub use schedules::{auto_tune, derive_constants, DeriveOptions, DerivedConstants, StepSchedule};
pub use solver::{fit_rate, monte_carlo, run, IterateState, RunConfig, Trajectory};
