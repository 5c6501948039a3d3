//! Dropout training as distributionally robust estimation for generalized
//! linear models.
//!
//! The crate provides the exponential-family losses, the exact and sampled
//! dropout objectives, closed-form linear solutions, several solvers
//! (gradient descent on the enumerated objective, dropout SGD, sample
//! average approximation and an unbiased multilevel Monte Carlo estimator),
//! the rule for choosing the dropout probability, and the simulation
//! harness behind the `dropout-dro` binary.

pub mod dropout;
pub mod error;
pub mod glm;
pub mod harness;
pub mod linreg;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod solvers;
pub mod tuner;

pub use dropout::{DropoutSpec, FeasibleNoiseDist, Mask};
pub use error::{DroError, Result};
pub use glm::{fit_mle, make_family, Dataset, FamilyKind, GlmFamily, ModelParams};
pub use linreg::dropout_ridge;
pub use optim::{GdConfig, StepRule};
pub use solvers::{mlmc_solve, solve_exact_gd, solve_saa, solve_sgd, MlmcConfig, MlmcReport, SgdConfig};
pub use tuner::{choose_delta, DeltaChoice};
