//! LQR policy optimization for linear plants with a uniformly distributed
//! scalar parameter.
//!
//! The parametric plant is lifted onto an orthonormal Legendre basis by
//! Galerkin projection. The resulting deterministic surrogate has a
//! structured gain `I kron K`, whose LQR cost is minimized by gradient
//! descent. The [`validation`] module holds independent per-parameter
//! oracles for checking the surrogate against the true expected cost.

pub mod basis;
pub mod cli;
pub mod config;
pub mod error;
pub mod linalg;
pub mod optimizer;
pub mod surrogate;
pub mod system;
pub mod validation;

pub use error::{Error, Result};
