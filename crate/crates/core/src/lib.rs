//! Sparse varying-coefficient functional linear models.
//!
//! Scalar responses are regressed on several functional predictors whose
//! coefficient surfaces `β_j(s, t)` vary with an exogenous variable `t`.
//! Predictors are reduced to FPC scores, coefficient surfaces are expanded
//! in a tensor basis, and the resulting group structure is estimated with a
//! group (adaptive) elastic-net penalty by blockwise coordinate descent,
//! tuned by BIC.

pub mod basis;
pub mod cli;
pub mod design;
pub mod error;
pub mod fpca;
pub mod io;
pub mod model;
pub mod quadrature;
mod serde_util;
pub mod solver;
pub mod simulation;
pub mod tuning;

pub use error::{Error, Result};
