//! Small dense helpers shared by every module. All tolerances are relative to
//! the scale of the matrix being tested.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative smallest-singular-value floor for invertibility.
pub const INV_TOL: f64 = 1e-10;
/// Relative asymmetry allowed in covariance inputs.
pub const SYM_TOL: f64 = 1e-8;
/// Relative residual allowed in algebraic identities.
pub const RES_TOL: f64 = 1e-9;
/// Relative width of the undecided band around zero in definiteness tests.
pub const DEF_TOL: f64 = 1e-9;

pub fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// `(sigma_min, sigma_max)`.
pub fn singular_value_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.singular_values();
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    (lo, hi)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_value_range(m).1
}

pub fn is_invertible(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.is_empty() || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let (lo, hi) = singular_value_range(m);
    hi > 0.0 && lo > INV_TOL * hi
}

pub fn ensure_invertible(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if is_invertible(m) {
        Ok(())
    } else {
        Err(Error::SingularMatrix(name.to_string()))
    }
}

pub fn inverse(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    ensure_invertible(m, name)?;
    m.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix(name.to_string()))
}

/// Solves `a x = b` by partial-pivot LU.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    ensure_invertible(a, name)?;
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularMatrix(name.to_string()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Extreme eigenvalues `(min, max)` of the symmetric part of `m`.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Relative asymmetry `||m - m^T||_F / ||m||_F` (zero for the zero matrix).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.norm();
    if scale == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / scale
    }
}

/// Validates near-symmetry and returns the exactly symmetrized copy.
pub fn checked_symmetric(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
    }
    let deviation = asymmetry(m);
    if deviation > SYM_TOL {
        return Err(Error::AsymmetricCovariance {
            name: name.to_string(),
            deviation,
        });
    }
    Ok(symmetrize(m))
}

/// Lower-triangular factor `L` with `L L^T = sigma` (up to jitter).
///
/// The exact zero matrix yields the zero factor. A PSD matrix whose Cholesky
/// fails is retried with diagonal jitter starting at `1e-12`.
pub fn gaussian_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sigma.nrows();
    if sigma.iter().all(|&x| x == 0.0) {
        return DMatrix::zeros(n, n);
    }
    if let Some(ch) = sigma.clone().cholesky() {
        return ch.l();
    }
    let mut jitter = 1e-12;
    loop {
        let shifted = sigma + identity(n) * jitter;
        if let Some(ch) = shifted.cholesky() {
            return ch.l();
        }
        jitter *= 10.0;
        assert!(jitter < 1e6, "covariance factorization failed; matrix is not PSD");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invertibility_is_scale_free() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 4.0]);
        assert!(is_invertible(&m));
        assert!(is_invertible(&(&m * 1e-30)));
        assert!(is_invertible(&(&m * 1e30)));
        let rank_one = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(!is_invertible(&rank_one));
        assert!(!is_invertible(&DMatrix::zeros(3, 3)));
    }

    #[test]
    fn symmetric_check_rejects_and_repairs() {
        let ok = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0 + 1e-12, 3.0]);
        let s = checked_symmetric(&ok, "S").unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
        let bad = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        assert!(matches!(
            checked_symmetric(&bad, "S"),
            Err(Error::AsymmetricCovariance { .. })
        ));
    }

    #[test]
    fn factor_handles_singular_psd() {
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(gaussian_factor(&z), z);
        let rank_one = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = gaussian_factor(&rank_one);
        assert!((&l * l.transpose() - rank_one).norm() < 1e-5);
    }

    #[test]
    fn eig_range_uses_symmetric_part() {
        // Skew part contributes nothing to the quadratic form.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, -5.0, 2.0]);
        let (lo, hi) = sym_eig_range(&m);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }
}
