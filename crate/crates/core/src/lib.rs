//! Thresholding-based iterative selection procedures (TISP) for sparse
//! penalized generalized linear models.
//!
//! The crate covers threshold rules and their penalties, GLM families, the
//! group TISP solver with relaxation and intercepts, proportional screening,
//! selective cross-validation, synthetic benchmark generators and the
//! evaluation metrics used to score them.

pub mod error;
pub mod experiments;
pub mod glm;
pub mod linalg;
pub mod metrics;
pub mod screening;
pub mod simulation;
pub mod solver;
pub mod thresholding;
pub mod tuning;

pub use error::{Result, TispError};
pub use glm::GlmFamily;
pub use solver::{tisp_fit, FitResult, GroupSpec, Problem, SolverOptions};
pub use thresholding::ThresholdRule;
