//! Definiteness tests that decide whether gradient descent through a biased
//! sensitivity model converges.
//!
//! Every test symmetrizes its matrix first: `x^T M x` only sees `(M + M^T)/2`.
//! Strict inequalities are decided outside a band of half-width
//! `DEF_TOL * ||M||_2`; inside the band the answer is left undecided.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::asymptotic_model;
use crate::linalg::{self, identity, DEF_TOL};
use crate::system::{ClosedLoop, ClosedLoopSystem, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// Condition matrix positive definite: convergence guaranteed.
    ConvergentC,
    /// Condition matrix negative definite: divergence guaranteed.
    DivergentCPrime,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::ConvergentC => "ConvergentC",
            Verdict::DivergentCPrime => "DivergentCPrime",
            Verdict::Inconclusive => "Inconclusive",
        }
    }
}

/// Outcome of the model alignment test `Pi Pi_hat^T + Pi_hat Pi^T > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub holds: bool,
    pub lambda_min: f64,
}

fn require_same_square(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: shapes {:?} and {:?} must be equal and square",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `Pi Pi_hat^T + Pi_hat Pi^T`, exactly symmetric.
pub fn alignment_matrix(pi: &DMatrix<f64>, pi_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let m = pi * pi_hat.transpose();
    linalg::symmetrize(&(&m + m.transpose()))
}

pub fn check_alignment(pi: &DMatrix<f64>, pi_hat: &DMatrix<f64>) -> Result<Alignment> {
    require_same_square(pi, pi_hat, "alignment")?;
    let m = alignment_matrix(pi, pi_hat);
    let (lo, _) = linalg::sym_eig_range(&m);
    let tol = DEF_TOL * linalg::spectral_norm(&m);
    Ok(Alignment {
        holds: lo > tol,
        lambda_min: lo,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    /// Alignment matrix evaluated at the asymptotic model.
    pub m_align: DMatrix<f64>,
    /// `G G^T - (B G^T + G B^T)/2` with `B = (I - Lambda)(K S)^-1`.
    pub m_c: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub verdict: Verdict,
    /// `lambda_min`, or `-lambda_max` when the verdict is divergent.
    pub margin: f64,
    /// Set when `Lambda` is not symmetric, i.e. `Sigma_r` and `Sigma_w` do not
    /// commute and the pairing of the two cross terms is a modelling choice.
    pub lambda_asymmetric: bool,
}

#[derive(Serialize)]
struct ReportJson {
    lambda_min: f64,
    lambda_max: f64,
    verdict: &'static str,
    margin: f64,
    lambda_asymmetric: bool,
    m_c: Vec<Vec<f64>>,
}

impl ConditionReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ReportJson {
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            verdict: self.verdict.as_str(),
            margin: self.margin,
            lambda_asymmetric: self.lambda_asymmetric,
            m_c: crate::estimator::matrix_rows(&self.m_c),
        })
        .expect("report serializes")
    }
}

/// Classifies a symmetric matrix by definiteness with the relative band.
pub fn classify(m: &DMatrix<f64>) -> (f64, f64, Verdict) {
    let (lo, hi) = linalg::sym_eig_range(m);
    let tol = DEF_TOL * linalg::spectral_norm(m);
    let verdict = if lo > tol {
        Verdict::ConvergentC
    } else if hi < -tol {
        Verdict::DivergentCPrime
    } else {
        Verdict::Inconclusive
    };
    (lo, hi, verdict)
}

pub fn condition_matrix(cl: &ClosedLoop) -> Result<DMatrix<f64>> {
    let n = cl.dim();
    let ks_inv = linalg::inverse(&cl.derived.ks, "K S")?;
    let bias = (identity(n) - cl.lambda()) * ks_inv;
    let g = cl.g();
    let cross = &bias * g.transpose();
    let m = g * g.transpose() - (&cross + cross.transpose()) * 0.5;
    Ok(linalg::symmetrize(&m))
}

pub fn check_condition_c(cl: &ClosedLoop) -> Result<ConditionReport> {
    let m_c = condition_matrix(cl)?;
    let (lambda_min, lambda_max, verdict) = classify(&m_c);
    let margin = match verdict {
        Verdict::DivergentCPrime => -lambda_max,
        _ => lambda_min,
    };
    let pi_hat = asymptotic_model(cl)?.pi_hat;
    Ok(ConditionReport {
        m_align: alignment_matrix(cl.g(), &pi_hat),
        m_c,
        lambda_min,
        lambda_max,
        verdict,
        margin,
        lambda_asymmetric: linalg::asymmetry(cl.lambda()) > 1e-12,
    })
}

/// `lambda_min` of the condition matrix with `Sigma_w = sigma_w2 * I`.
pub fn condition_margin(system: &ClosedLoopSystem, sigma_r: &DMatrix<f64>, sigma_w2: f64) -> Result<f64> {
    let noise = NoiseModel::isotropic(sigma_r.clone(), sigma_w2, crate::system::NoiseProcess::Iid)?;
    let cl = ClosedLoop::new(system.clone(), noise)?;
    let m = condition_matrix(&cl)?;
    Ok(linalg::sym_eig_range(&m).0)
}

/// Absolute bracket width at which the threshold search stops.
pub const THRESHOLD_TOL: f64 = 1e-3;

/// Disturbance variance at which `lambda_min` of the condition matrix crosses
/// zero inside `[lo, hi]`, found by bisection.
pub fn condition_threshold(system: &ClosedLoopSystem, sigma_r: &DMatrix<f64>, range: (f64, f64)) -> Result<f64> {
    let (mut lo, mut hi) = range;
    if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid variance range [{lo}, {hi}]")));
    }
    let f_lo = condition_margin(system, sigma_r, lo)?;
    let f_hi = condition_margin(system, sigma_r, hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoSignChange { lo, hi });
    }
    let lo_positive = f_lo > 0.0;
    while hi - lo > THRESHOLD_TOL {
        let mid = 0.5 * (lo + hi);
        let f_mid = condition_margin(system, sigma_r, mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if (f_mid > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Scalar form of the convergence condition: `Lambda > S`.
///
/// The reduction divides by `K S` and by `G`, so both must be positive.
pub fn scalar_condition(g: f64, k: f64, lambda: f64) -> Result<bool> {
    let return_difference = 1.0 + g * k;
    if return_difference == 0.0 || !return_difference.is_finite() {
        return Err(Error::SingularMatrix("1 + G K".into()));
    }
    let s = 1.0 / return_difference;
    if k * s <= 0.0 {
        return Err(Error::AssumptionViolated(format!("K S = {} is not positive", k * s)));
    }
    if g <= 0.0 {
        return Err(Error::AssumptionViolated(format!("G = {g} is not positive")));
    }
    Ok(lambda > s)
}

/// Limit of the condition when the controller tracks perfectly (`K^-1 -> 0`):
/// `(I - Lambda) G G^T / 2 + G G^T (I - Lambda)^T / 2 < G G^T`.
pub fn perfect_tracking_condition(g: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<bool> {
    require_same_square(g, lambda, "perfect tracking")?;
    let n = g.nrows();
    let ggt = g * g.transpose();
    let complement = identity(n) - lambda;
    let cross = &complement * &ggt;
    let m = linalg::symmetrize(&(&ggt - (&cross + cross.transpose()) * 0.5));
    let (lo, _) = linalg::sym_eig_range(&m);
    Ok(lo > DEF_TOL * linalg::spectral_norm(&ggt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example;
    use crate::system::{build_system, NoiseProcess};

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn exact_model_is_aligned() {
        let pi = example::plant();
        let a = check_alignment(&pi, &pi).unwrap();
        let smin = pi.singular_values().min();
        assert!(a.holds);
        assert!((a.lambda_min - 2.0 * smin * smin).abs() < 1e-10);
        let flipped = check_alignment(&pi, &(-&pi)).unwrap();
        assert!(!flipped.holds && flipped.lambda_min < 0.0);
    }

    #[test]
    fn alignment_shape_mismatch() {
        assert!(check_alignment(&identity(2), &identity(3)).is_err());
    }

    #[test]
    fn example_low_noise_model_is_aligned() {
        let cl = example::example_loop(1.0).unwrap();
        let pi_hat = asymptotic_model(&cl).unwrap().pi_hat;
        assert!(check_alignment(&example::plant(), &pi_hat).unwrap().holds);
    }

    #[test]
    fn disturbance_free_condition_is_plant_gram() {
        let noise = NoiseModel::new(example::reference_covariance(), DMatrix::zeros(2, 2), NoiseProcess::Iid).unwrap();
        let cl = build_system(example::plant(), example::controller(), noise).unwrap();
        let report = check_condition_c(&cl).unwrap();
        let g = example::plant();
        assert!((&report.m_c - &g * g.transpose()).norm() < 1e-12);
        assert_eq!(report.verdict, Verdict::ConvergentC);
        assert!(!report.lambda_asymmetric);
    }

    #[test]
    fn example_regimes() {
        let low = check_condition_c(&example::example_loop(1.0).unwrap()).unwrap();
        assert_eq!(low.verdict, Verdict::ConvergentC);
        assert_eq!(low.margin, low.lambda_min);
        let high = check_condition_c(&example::example_loop(100.0).unwrap()).unwrap();
        assert_ne!(high.verdict, Verdict::ConvergentC);
        // The alignment matrix at the limit model is twice the condition matrix.
        assert!((&low.m_align - &low.m_c * 2.0).norm() < 1e-9 * low.m_c.norm());
    }

    #[test]
    fn scalar_loop_with_strong_reference() {
        let noise = NoiseModel::new(scalar(2.0), scalar(1.0), NoiseProcess::Iid).unwrap();
        let cl = build_system(scalar(1.0), scalar(1.0), noise).unwrap();
        assert!((cl.lambda()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((cl.derived.s[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(check_condition_c(&cl).unwrap().verdict, Verdict::ConvergentC);
        assert!(scalar_condition(1.0, 1.0, 2.0 / 3.0).unwrap());
    }

    #[test]
    fn scalar_condition_cases() {
        assert!(scalar_condition(1.0, 1.0, 0.6).unwrap());
        assert!(!scalar_condition(1.0, 1.0, 0.5).unwrap());
        // K S < 0: K = -0.5, S = 1 / (1 - 0.5) = 2
        assert!(matches!(scalar_condition(1.0, -0.5, 0.5), Err(Error::AssumptionViolated(_))));
        assert!(matches!(scalar_condition(1.0, -1.0, 0.5), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn scalar_reduction_needs_positive_plant() {
        // G < 0 with K S > 0: the condition matrix is G^2 - G (1 - Lambda)/(K S) > 0,
        // yet Lambda > S fails, so the reduction is refused rather than answered wrongly.
        let (g, k) = (-0.5, 1.0);
        let noise = NoiseModel::new(scalar(1.0), scalar(1.0), NoiseProcess::Iid).unwrap();
        let cl = build_system(scalar(g), scalar(k), noise).unwrap();
        assert!(cl.derived.ks[(0, 0)] > 0.0);
        assert_eq!(check_condition_c(&cl).unwrap().verdict, Verdict::ConvergentC);
        assert!(matches!(scalar_condition(g, k, 0.5), Err(Error::AssumptionViolated(_))));
    }

    #[test]
    fn threshold_of_scalar_unit_loop() {
        // Lambda = S = 1/2 at sigma_w2 = 1.
        let sys = ClosedLoopSystem::new(scalar(1.0), scalar(1.0)).unwrap();
        let t = condition_threshold(&sys, &scalar(1.0), (0.0, 10.0)).unwrap();
        assert!((t - 1.0).abs() <= THRESHOLD_TOL);
    }

    #[test]
    fn threshold_requires_sign_change() {
        let sys = ClosedLoopSystem::new(example::plant(), example::controller()).unwrap();
        let err = condition_threshold(&sys, &example::reference_covariance(), (0.0, 10.0)).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
        assert!(condition_threshold(&sys, &example::reference_covariance(), (5.0, 1.0)).is_err());
    }

    #[test]
    fn perfect_tracking_boundaries() {
        let g = example::plant();
        assert!(perfect_tracking_condition(&g, &identity(2)).unwrap());
        assert!(!perfect_tracking_condition(&g, &DMatrix::zeros(2, 2)).unwrap());
        assert!(perfect_tracking_condition(&g, &(identity(2) * 0.01)).unwrap());
    }

    #[test]
    fn verdict_band() {
        let (_, _, v) = classify(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(v, Verdict::Inconclusive);
        let (_, _, v) = classify(&(-identity(2)));
        assert_eq!(v, Verdict::DivergentCPrime);
    }
}
