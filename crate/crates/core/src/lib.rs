//! Closed-loop identification bias and its effect on model-based feedback
//! optimization.
//!
//! A steady-state sensitivity model fitted by least squares to data from a
//! feedback loop converges to a blend of the true plant and the negative
//! inverse controller. This crate computes that limit, decides whether
//! gradient descent through the biased model converges or diverges, and
//! simulates both the data-generating loop and the optimizer.
//!
//! Modules:
//! - [`system`]: loop gains, sensitivity, signal-to-noise ratio, stationary covariances
//! - [`data`]: seeded closed-loop datasets
//! - [`estimator`]: least-squares fit and its asymptotic limit
//! - [`stability`]: alignment and definiteness conditions, threshold search
//! - [`oag`]: online approximate gradient simulation and the PI equivalence
//! - [`example`]: the two-dimensional reference instance

pub mod data;
pub mod error;
pub mod estimator;
pub mod example;
pub mod linalg;
pub mod oag;
pub mod stability;
pub mod system;

pub use error::{Error, Result};

/// Largest supported loop dimension.
pub const MAX_DIM: usize = 64;
