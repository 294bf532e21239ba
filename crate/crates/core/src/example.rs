//! The two-input, two-output reference instance: plant `[[1, 2], [-3, 4]]`,
//! controller `[[10, 1], [3, 2]]`, reference covariance `[[2, 1], [1, 3]]`
//! and isotropic disturbance `sigma_w2 * I`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::system::{build_system, ClosedLoop, NoiseModel, NoiseProcess};

/// Number of closed-loop samples used to fit the model.
pub const SAMPLES: usize = 5000;
/// Optimizer step size.
pub const STEP: f64 = 1e-3;
/// Approximate disturbance variance where the convergence condition flips.
pub const THRESHOLD: f64 = 13.7;

pub fn plant() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 4.0])
}

pub fn controller() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[10.0, 1.0, 3.0, 2.0])
}

pub fn reference_covariance() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0])
}

pub fn initial_input() -> DVector<f64> {
    DVector::from_vec(vec![-0.75, 1.5])
}

pub fn example_loop(sigma_w2: f64) -> Result<ClosedLoop> {
    let noise = NoiseModel::isotropic(reference_covariance(), sigma_w2, NoiseProcess::Iid)?;
    build_system(plant(), controller(), noise)
}
