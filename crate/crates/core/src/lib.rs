//! Inexact gradient method for composite convex problems `f(x) = g(Ex)`.
//!
//! Supplies the solver ([`engine`]), the least-squares and logistic
//! objectives ([`problem`]), a certified description of the optimal set
//! ([`optimal`]) and checks of convergence inequalities on recorded runs
//! ([`diagnostics`]).

pub mod dataset;
pub mod diagnostics;
pub mod engine;
pub mod linalg;
pub mod optimal;
pub mod problem;

pub use engine::{run, ErrorModel, IterationRecord, Trajectory};
pub use linalg::Matrix;
pub use optimal::{OptimalSet, OptimalSetCertificate};
pub use problem::{ComposedProblem, Loss};
