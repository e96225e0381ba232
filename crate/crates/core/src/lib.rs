//! Covariance-compensated nonlinear Kalman filtering.
//!
//! Moment estimators (EKF, second-order EKF, simplex, cubature and scaled
//! simplex rules) with an optional compensation term that inflates the
//! propagated covariance, a four-step filter loop, diagnostics for the
//! compensation magnitude and Monte-Carlo experiment drivers.

// negated comparisons below are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod filter;
pub mod models;
pub mod moments;
pub mod numerics;

pub use error::{Error, Result};
