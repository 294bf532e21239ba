//! Direct least-squares sensitivity fit and its closed-loop limit.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, identity, INV_TOL, RES_TOL};
use crate::system::{joint_stationary_cov, ClosedLoop};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    FiniteSample(usize),
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityEstimate {
    pub pi_hat: DMatrix<f64>,
    pub kind: EstimateKind,
    /// Additive bias `B` with `pi_hat = G - B`; only known in the limit.
    pub bias: Option<DMatrix<f64>>,
    /// Variance of the Gaussian likelihood. It scales the objective but does
    /// not move its maximizer.
    pub noise_variance: f64,
}

#[derive(Serialize)]
struct EstimateJson<'a> {
    pi_hat: Vec<Vec<f64>>,
    bias: Option<Vec<Vec<f64>>>,
    kind: &'a str,
    #[serde(rename = "T")]
    samples: Option<usize>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl SensitivityEstimate {
    /// `{"pi_hat": [[..]], "bias": [[..]] | null, "kind": .., "T": .. | null}`.
    pub fn to_json(&self) -> serde_json::Value {
        let (kind, samples) = match self.kind {
            EstimateKind::FiniteSample(t) => ("finite_sample", Some(t)),
            EstimateKind::Asymptotic => ("asymptotic", None),
        };
        serde_json::to_value(EstimateJson {
            pi_hat: matrix_rows(&self.pi_hat),
            bias: self.bias.as_ref().map(matrix_rows),
            kind,
            samples,
        })
        .expect("estimate serializes")
    }
}

/// Average Gaussian log-likelihood of `y_t ~ N(pi u_t, sigma2 I)` over the dataset.
pub fn log_likelihood(pi: &DMatrix<f64>, data: &Dataset, sigma2: f64) -> f64 {
    let n = data.dim() as f64;
    let resid = &data.y - &data.u * pi.transpose();
    let sq = resid.norm_squared() / data.len() as f64;
    -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - 0.5 * sq / sigma2
}

pub fn fit_ls(data: &Dataset) -> Result<SensitivityEstimate> {
    fit_ls_with_variance(data, 1.0)
}

/// Maximum-likelihood fit of `y = pi u` without intercept.
///
/// Solves `U X = Y` in the least-squares sense through a Householder QR of
/// `U`, then `pi_hat = X^T`.
pub fn fit_ls_with_variance(data: &Dataset, sigma2: f64) -> Result<SensitivityEstimate> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!("likelihood variance {sigma2} must be positive")));
    }
    let n = data.dim();
    let t = data.len();
    if t < n {
        return Err(Error::RankDeficientData(format!("{t} samples cannot identify an {n}x{n} model")));
    }
    let qr = data.u.clone().qr();
    let r = qr.r();
    let (lo, hi) = linalg::singular_value_range(&r);
    // sigma(U^T U) = sigma(R)^2
    if !(hi > 0.0) || lo * lo <= INV_TOL * hi * hi {
        return Err(Error::RankDeficientData(
            "U^T U is numerically singular; the inputs are not sufficiently exciting".into(),
        ));
    }
    let mut qty = data.y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, n).into_owned();
    let x = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::RankDeficientData("triangular factor is singular".into()))?;
    Ok(SensitivityEstimate {
        pi_hat: x.transpose(),
        kind: EstimateKind::FiniteSample(t),
        bias: None,
        noise_variance: sigma2,
    })
}

/// Almost-sure limit of the direct fit on closed-loop data:
/// `Lambda G + (I - Lambda)(-K^-1)`, with bias `B = (I - Lambda)(K S)^-1`.
///
/// The result is cross-checked against the regression coefficient
/// `Sigma_uy Sigma_u^-1` of the stationary joint law.
pub fn asymptotic_model(cl: &ClosedLoop) -> Result<SensitivityEstimate> {
    let n = cl.dim();
    let lambda = cl.lambda();
    let complement = identity(n) - lambda;
    let k_inv = linalg::inverse(cl.k(), "K")?;
    let pi_hat = lambda * cl.g() - &complement * &k_inv;
    let ks_inv = linalg::inverse(&cl.derived.ks, "K S")?;
    let bias = &complement * ks_inv;

    let scale = 1.0 + cl.g().norm() + k_inv.norm();
    let decomposition = (&pi_hat + &bias - cl.g()).norm();
    if decomposition > RES_TOL * scale {
        return Err(Error::InconsistentModel(format!(
            "pi_hat + B differs from G by {decomposition:.3e}"
        )));
    }
    let regression = joint_stationary_cov(cl).regression()?;
    let gap = (&regression - &pi_hat).norm();
    if gap > RES_TOL * scale * condition_number(&joint_stationary_cov(cl).sigma_u) {
        return Err(Error::InconsistentModel(format!(
            "Sigma_uy Sigma_u^-1 differs from the closed form by {gap:.3e}"
        )));
    }
    Ok(SensitivityEstimate {
        pi_hat,
        kind: EstimateKind::Asymptotic,
        bias: Some(bias),
        noise_variance: 1.0,
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = linalg::singular_value_range(m);
    (hi / lo).max(1.0)
}
