//! Square steady-state closed loop `y = G u + w`, `u = K (r - y)` and the
//! quantities derived from it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, identity, RES_TOL};
use crate::MAX_DIM;

/// Temporal structure of the exogenous sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseProcess {
    Iid,
    /// First-order autoregression with the given pole; the stationary
    /// covariance is the configured one.
    Ar1 { rho: f64 },
}

/// Stationary covariances of the reference `r` and disturbance `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    sigma_r: DMatrix<f64>,
    sigma_w: DMatrix<f64>,
    process: NoiseProcess,
}

impl NoiseModel {
    pub fn new(sigma_r: DMatrix<f64>, sigma_w: DMatrix<f64>, process: NoiseProcess) -> Result<Self> {
        let sigma_r = linalg::checked_symmetric(&sigma_r, "Sigma_r")?;
        let sigma_w = linalg::checked_symmetric(&sigma_w, "Sigma_w")?;
        if sigma_r.nrows() != sigma_w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "Sigma_r is {0}x{0} but Sigma_w is {1}x{1}",
                sigma_r.nrows(),
                sigma_w.nrows()
            )));
        }
        if sigma_r.is_empty() {
            return Err(Error::DimensionMismatch("covariances are empty".into()));
        }
        if sigma_r.nrows() > MAX_DIM {
            return Err(Error::DimensionTooLarge(sigma_r.nrows()));
        }
        let (r_lo, _) = linalg::sym_eig_range(&sigma_r);
        if r_lo <= 0.0 || sigma_r.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(format!(
                "Sigma_r must be positive definite (min eigenvalue {r_lo:.3e})"
            )));
        }
        let (w_lo, _) = linalg::sym_eig_range(&sigma_w);
        if w_lo < -linalg::SYM_TOL * linalg::spectral_norm(&sigma_w) {
            return Err(Error::NotPositiveDefinite(format!(
                "Sigma_w must be positive semidefinite (min eigenvalue {w_lo:.3e})"
            )));
        }
        if let NoiseProcess::Ar1 { rho } = process {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "AR(1) coefficient {rho} outside (-1, 1)"
                )));
            }
        }
        Ok(Self {
            sigma_r,
            sigma_w,
            process,
        })
    }

    /// `Sigma_w = sigma_w2 * I`.
    pub fn isotropic(sigma_r: DMatrix<f64>, sigma_w2: f64, process: NoiseProcess) -> Result<Self> {
        if !(sigma_w2 >= 0.0) || !sigma_w2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "disturbance variance {sigma_w2} must be finite and non-negative"
            )));
        }
        let n = sigma_r.nrows();
        Self::new(sigma_r, identity(n) * sigma_w2, process)
    }

    pub fn dim(&self) -> usize {
        self.sigma_r.nrows()
    }

    pub fn sigma_r(&self) -> &DMatrix<f64> {
        &self.sigma_r
    }

    pub fn sigma_w(&self) -> &DMatrix<f64> {
        &self.sigma_w
    }

    pub fn process(&self) -> NoiseProcess {
        self.process
    }

    pub fn with_process(mut self, process: NoiseProcess) -> Result<Self> {
        self.process = process;
        Self::new(self.sigma_r, self.sigma_w, process)
    }

    pub fn disturbance_free(&self) -> bool {
        self.sigma_w.iter().all(|&x| x == 0.0)
    }

    /// Static Wiener gain `Lambda = Sigma_r (Sigma_r + Sigma_w)^-1`.
    ///
    /// Computed from `(Sigma_r + Sigma_w)^T Lambda^T = Sigma_r^T`; equals `I`
    /// exactly when there is no disturbance.
    pub fn signal_to_noise(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if self.disturbance_free() {
            return Ok(identity(n));
        }
        let total = &self.sigma_r + &self.sigma_w;
        let lambda_t = linalg::solve(&total.transpose(), &self.sigma_r.transpose(), "Sigma_r + Sigma_w")?;
        Ok(lambda_t.transpose())
    }
}

/// Steady-state plant gain `G` (the true sensitivity) and controller gain `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    g: DMatrix<f64>,
    k: DMatrix<f64>,
}

impl ClosedLoopSystem {
    pub fn new(g: DMatrix<f64>, k: DMatrix<f64>) -> Result<Self> {
        if !g.is_square() || !k.is_square() || g.shape() != k.shape() {
            return Err(Error::DimensionMismatch(format!(
                "G is {}x{} and K is {}x{}; both must be square of equal size",
                g.nrows(),
                g.ncols(),
                k.nrows(),
                k.ncols()
            )));
        }
        if g.is_empty() {
            return Err(Error::DimensionMismatch("G and K are empty".into()));
        }
        if g.nrows() > MAX_DIM {
            return Err(Error::DimensionTooLarge(g.nrows()));
        }
        linalg::ensure_invertible(&g, "G")?;
        linalg::ensure_invertible(&k, "K")?;
        let n = g.nrows();
        linalg::ensure_invertible(&(identity(n) + &g * &k), "I + G K")?;
        Ok(Self { g, k })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn plant(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn controller(&self) -> &DMatrix<f64> {
        &self.k
    }
}

/// Loop maps that depend only on `G`, `K` and the noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopDerived {
    /// Sensitivity `S = (I + G K)^-1`, the gain from `w` to `y`.
    pub s: DMatrix<f64>,
    /// `K S`, the gain from `d = r - w` to `u`.
    pub ks: DMatrix<f64>,
    /// `S G K`, the gain from `r` to `y`.
    pub sgk: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

/// A validated closed loop together with its noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub system: ClosedLoopSystem,
    pub noise: NoiseModel,
    pub derived: LoopDerived,
}

pub fn build_system(g: DMatrix<f64>, k: DMatrix<f64>, noise: NoiseModel) -> Result<ClosedLoop> {
    let system = ClosedLoopSystem::new(g, k)?;
    ClosedLoop::new(system, noise)
}

impl ClosedLoop {
    pub fn new(system: ClosedLoopSystem, noise: NoiseModel) -> Result<Self> {
        let n = system.dim();
        if noise.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "system has n = {n} but the noise model has n = {}",
                noise.dim()
            )));
        }
        let return_difference = identity(n) + &system.g * &system.k;
        let s = linalg::inverse(&return_difference, "I + G K")?;
        let residual = (&return_difference * &s - identity(n)).norm();
        let (lo, hi) = linalg::singular_value_range(&return_difference);
        if residual > RES_TOL * (1.0 + hi / lo) {
            return Err(Error::InconsistentModel(format!(
                "sensitivity residual {residual:.3e} too large"
            )));
        }
        let ks = &system.k * &s;
        let sgk = &s * &system.g * &system.k;
        let lambda = noise.signal_to_noise()?;
        Ok(Self {
            system,
            noise,
            derived: LoopDerived { s, ks, sgk, lambda },
        })
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        Self::new(self.system.clone(), noise)
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.system.g
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.system.k
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.derived.lambda
    }

    /// `||(I + G K) S - I||_F`.
    pub fn sensitivity_residual(&self) -> f64 {
        let n = self.dim();
        ((identity(n) + self.g() * self.k()) * &self.derived.s - identity(n)).norm()
    }
}

/// Stationary second moments of the endogenous pair `(y, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    pub sigma_y: DMatrix<f64>,
    pub sigma_u: DMatrix<f64>,
    /// `E[y u^T]`.
    pub sigma_uy: DMatrix<f64>,
}

impl JointCovariance {
    /// Regression coefficient `Sigma_uy Sigma_u^-1` of `y` on `u`.
    pub fn regression(&self) -> Result<DMatrix<f64>> {
        // X Sigma_u = Sigma_uy  <=>  Sigma_u X^T = Sigma_uy^T (Sigma_u symmetric)
        let xt = linalg::solve(&self.sigma_u, &self.sigma_uy.transpose(), "Sigma_u")?;
        Ok(xt.transpose())
    }
}

/// Pushes the block-diagonal exogenous covariance through
/// `[y; u] = [[S, SGK], [-KS, KS]] [w; r]`.
pub fn joint_stationary_cov(cl: &ClosedLoop) -> JointCovariance {
    let d = &cl.derived;
    let sw = cl.noise.sigma_w();
    let sr = cl.noise.sigma_r();
    let ks_t = d.ks.transpose();
    let sigma_u = &d.ks * (sw + sr) * &ks_t;
    let sigma_uy = -(&d.s * sw * &ks_t) + &d.sgk * sr * &ks_t;
    let sigma_y = &d.s * sw * d.s.transpose() + &d.sgk * sr * d.sgk.transpose();
    JointCovariance {
        sigma_y: linalg::symmetrize(&sigma_y),
        sigma_u: linalg::symmetrize(&sigma_u),
        sigma_uy,
    }
}
