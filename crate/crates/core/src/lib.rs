//! Heteroscedastic covariance estimation for regression models.
//!
//! The library trains a mean network and a covariance head side by side and
//! compares covariance objectives under a shared protocol:
//!
//! - `tic`: covariance induced by a second-order Taylor expansion of the mean
//!   network — Jacobian and Hessian terms with learned nonnegative scales plus
//!   a learned positive definite offset.
//! - baselines: full/diagonal Gaussian negative log-likelihood, the
//!   β-weighted diagonal variant, a faithful split that fits the mean by
//!   squared error only, and plain mean squared error.
//! - `tac`: a task-agnostic correlation metric — how much observing every
//!   other output dimension improves prediction of the remaining one.
//!
//! `oracle` holds slow, independent reimplementations (dense inverses, finite
//! differences, Monte Carlo moments) used to cross-check the fast paths in
//! tests and in the CLI self-check.

// index arithmetic over flat row-major buffers is the house style here
#![allow(clippy::needless_range_loop)]

pub mod covheads;
pub mod data;
pub mod diffmlp;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod oracle;
pub mod trainer;
