//! Poisson limit of propagation-loss processes in cellular networks under
//! strong log-normal shadowing.
//!
//! - [`geometry`]: station layouts (Poisson, hexagonal torus, perturbed
//!   lattices) and empirical homogeneity.
//! - [`propagation`]: path loss, shadowing, marks and the (rescaled)
//!   propagation process of a typical user.
//! - [`poisson_limit`]: closed-form laws and exact samplers of the limit.
//! - [`stats`]: empirical CDFs, Kolmogorov-Smirnov tests and experiment
//!   protocols.
//! - [`estimator`]: regression estimate of the path-loss exponent.

pub mod error;
pub mod estimator;
pub mod geometry;
pub mod math;
pub mod parallel;
pub mod poisson_limit;
pub mod propagation;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
pub use parallel::Exec;
