use std::path::Path;

use anyhow::{bail, Context, Result};
use fo_bias::oag::{CostFunction, OagConfig};
use fo_bias::system::{build_system, ClosedLoop, ClosedLoopSystem, NoiseModel, NoiseProcess};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub oag: Option<OagSection>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub outputs: Option<OutputsConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_r: Vec<Vec<f64>>,
    pub sigma_w: SigmaW,
    #[serde(default)]
    pub process: ProcessConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaW {
    Matrix(Vec<Vec<f64>>),
    Isotropic(Isotropic),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Isotropic {
    pub isotropic: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessConfig {
    #[default]
    Iid,
    Ar1(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    #[serde(rename = "T", default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { samples: default_samples(), seed: 0 }
    }
}

fn default_samples() -> usize {
    fo_bias::example::SAMPLES
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OagSection {
    pub u0: Vec<f64>,
    /// Constant disturbance during optimization; zero when absent.
    #[serde(default)]
    pub w: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub eps: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_div_bound")]
    pub div_bound: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub cost: CostConfig,
}

fn one() -> f64 {
    1.0
}

fn default_step() -> f64 {
    fo_bias::example::STEP
}

fn default_max_iters() -> usize {
    1_000_000
}

fn default_div_bound() -> f64 {
    1e6
}

fn default_stride() -> usize {
    100
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostConfig {
    #[default]
    SumOfSquares,
    Quadratic(QuadraticCost),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticCost {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub y_ref: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    SigmaW2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    /// Bracket for the threshold search; defaults to the grid's extent.
    #[serde(default)]
    pub threshold_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    pub dir: String,
}

pub fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        bail!("{name} is empty");
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) {
        bail!("{name} has rows of unequal length");
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        bail!("{name} has non-finite entries");
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn vector(xs: &[f64], n: usize, name: &str) -> Result<DVector<f64>> {
    if xs.len() != n {
        bail!("{name} has length {} but the system dimension is {n}", xs.len());
    }
    if xs.iter().any(|x| !x.is_finite()) {
        bail!("{name} has non-finite entries");
    }
    Ok(DVector::from_column_slice(xs))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need linear algebra, so that a bad
    /// config fails before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let n = matrix(&self.system.g, "G")?.nrows();
        for (name, m) in [("K", &self.system.k), ("sigma_r", &self.noise.sigma_r)] {
            let m = matrix(m, name)?;
            if m.shape() != (n, n) {
                bail!("{name} must be {n}x{n}");
            }
        }
        match &self.noise.sigma_w {
            SigmaW::Matrix(m) => {
                if matrix(m, "sigma_w")?.shape() != (n, n) {
                    bail!("sigma_w must be {n}x{n}");
                }
            }
            SigmaW::Isotropic(s) if !(s.isotropic >= 0.0 && s.isotropic.is_finite()) => {
                bail!("isotropic sigma_w^2 must be finite and non-negative")
            }
            SigmaW::Isotropic(_) => {}
        }
        if self.estimation.samples == 0 {
            bail!("estimation.T must be positive");
        }
        if let Some(oag) = &self.oag {
            vector(&oag.u0, n, "oag.u0")?;
            if let Some(w) = &oag.w {
                vector(w, n, "oag.w")?;
            }
            if let CostConfig::Quadratic(q) = &oag.cost {
                if matrix(&q.q, "Q")?.shape() != (n, n) {
                    bail!("Q must be {n}x{n}");
                }
                vector(&q.y_ref, n, "y_ref")?;
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.grid.is_empty() {
                bail!("sweep.grid is empty");
            }
            if sweep.grid.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                bail!("sweep.grid values must be finite and non-negative");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn process(&self) -> NoiseProcess {
        match self.noise.process {
            ProcessConfig::Iid => NoiseProcess::Iid,
            ProcessConfig::Ar1(rho) => NoiseProcess::Ar1 { rho },
        }
    }

    pub fn system(&self) -> Result<ClosedLoopSystem> {
        Ok(ClosedLoopSystem::new(matrix(&self.system.g, "G")?, matrix(&self.system.k, "K")?)?)
    }

    pub fn sigma_r(&self) -> Result<DMatrix<f64>> {
        matrix(&self.noise.sigma_r, "sigma_r")
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        let sigma_r = self.sigma_r()?;
        Ok(match &self.noise.sigma_w {
            SigmaW::Matrix(m) => NoiseModel::new(sigma_r, matrix(m, "sigma_w")?, self.process())?,
            SigmaW::Isotropic(s) => NoiseModel::isotropic(sigma_r, s.isotropic, self.process())?,
        })
    }

    pub fn closed_loop(&self) -> Result<ClosedLoop> {
        let noise = self.noise()?;
        Ok(build_system(matrix(&self.system.g, "G")?, matrix(&self.system.k, "K")?, noise)?)
    }

    /// Same loop with `Sigma_w = sigma_w2 I`.
    pub fn closed_loop_at(&self, sigma_w2: f64) -> Result<ClosedLoop> {
        let noise = NoiseModel::isotropic(self.sigma_r()?, sigma_w2, self.process())?;
        Ok(self.closed_loop()?.with_noise(noise)?)
    }

    pub fn oag(&self) -> Result<Option<(OagConfig, CostFunction)>> {
        let Some(sec) = &self.oag else { return Ok(None) };
        let n = self.system.g.len();
        let w = match &sec.w {
            Some(w) => vector(w, n, "oag.w")?,
            None => DVector::zeros(n),
        };
        let mut cfg = OagConfig::new(vector(&sec.u0, n, "oag.u0")?, w);
        cfg.eps = sec.eps;
        cfg.step = sec.step;
        cfg.max_iters = sec.max_iters;
        cfg.div_bound = sec.div_bound;
        cfg.record_stride = sec.record_stride;
        let cost = match &sec.cost {
            CostConfig::SumOfSquares => CostFunction::SumOfSquares,
            CostConfig::Quadratic(q) => CostFunction::quadratic(matrix(&q.q, "Q")?, vector(&q.y_ref, n, "y_ref")?)?,
        };
        Ok(Some((cfg, cost)))
    }
}
