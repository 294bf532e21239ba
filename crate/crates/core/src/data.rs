//! Closed-loop datasets: exogenous Gaussian sequences pushed through the
//! static loop map, one steady state per observation time.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, RES_TOL};
use crate::system::{ClosedLoop, NoiseModel, NoiseProcess};

const REFERENCE_TAG: &str = "reference";
const DISTURBANCE_TAG: &str = "disturbance";

/// 64-bit FNV-1a, used to split one user seed into named streams.
const fn stream_tag(tag: &str) -> u64 {
    let bytes = tag.as_bytes();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut i = 0;
    while i < bytes.len() {
        hash ^= bytes[i] as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        i += 1;
    }
    hash
}

fn stream_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream_tag(tag))
}

/// Draws `len` rows of a zero-mean Gaussian process whose stationary
/// covariance is `sigma`.
fn sample_stream(sigma: &DMatrix<f64>, process: NoiseProcess, len: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = sigma.nrows();
    let factor = linalg::gaussian_factor(sigma);
    let innovation_scale = match process {
        NoiseProcess::Iid => 1.0,
        NoiseProcess::Ar1 { rho } => (1.0 - rho * rho).sqrt(),
    };
    let mut out = DMatrix::zeros(len, n);
    let mut z = DVector::zeros(n);
    let mut prev = DVector::<f64>::zeros(n);
    for t in 0..len {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        let shock = &factor * &z;
        let x = match process {
            NoiseProcess::Ar1 { rho } if t > 0 => &prev * rho + shock * innovation_scale,
            _ => shock,
        };
        out.set_row(t, &x.transpose());
        prev = x;
    }
    out
}

/// Samples the reference and disturbance records `(R, W)`, each `T x n`.
///
/// The two streams come from independent generators derived from `seed`, so
/// each is reproducible on its own.
pub fn sample_exogenous(noise: &NoiseModel, samples: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if samples == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let r = sample_stream(noise.sigma_r(), noise.process(), samples, &mut stream_rng(seed, REFERENCE_TAG));
    let w = sample_stream(noise.sigma_w(), noise.process(), samples, &mut stream_rng(seed, DISTURBANCE_TAG));
    Ok((r, w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exogenous {
    pub r: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl Exogenous {
    /// `D = R - W`, the combined signal seen by the controller.
    pub fn combined(&self) -> DMatrix<f64> {
        &self.r - &self.w
    }
}

/// Observed steady states `{(u_t, y_t)}`, stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub exogenous: Option<Exogenous>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.u.ncols()
    }

    /// Largest row-wise deviation from `[y; u] = [[S, SGK], [-KS, KS]] [w; r]`,
    /// relative to the row magnitude. `None` when the exogenous records were
    /// not retained.
    pub fn block_map_residual(&self, cl: &ClosedLoop) -> Option<f64> {
        let exo = self.exogenous.as_ref()?;
        let d = &cl.derived;
        let y_map = &exo.w * d.s.transpose() + &exo.r * d.sgk.transpose();
        let u_map = -(&exo.w * d.ks.transpose()) + &exo.r * d.ks.transpose();
        let gain = d.s.norm() + d.sgk.norm() + d.ks.norm();
        let mut worst: f64 = 0.0;
        for t in 0..self.len() {
            let mag = exo.r.row(t).amax().max(exo.w.row(t).amax());
            let dev = (self.y.row(t) - y_map.row(t))
                .amax()
                .max((self.u.row(t) - u_map.row(t)).amax());
            worst = worst.max(dev / (1.0 + gain * mag));
        }
        Some(worst)
    }

    /// Writes `t,u1..un,y1..yn[,r1..rn,w1..wn]` with round-trip float formatting.
    pub fn write_csv<W: Write>(&self, out: &mut W, comment: Option<&str>) -> io::Result<()> {
        let n = self.dim();
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("u{i}")));
        header.extend((1..=n).map(|i| format!("y{i}")));
        if self.exogenous.is_some() {
            header.extend((1..=n).map(|i| format!("r{i}")));
            header.extend((1..=n).map(|i| format!("w{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for t in 0..self.len() {
            line.clear();
            line.push_str(&(t + 1).to_string());
            let mut push_row = |m: &DMatrix<f64>| {
                for j in 0..n {
                    line.push(',');
                    line.push_str(&format!("{:?}", m[(t, j)]));
                }
            };
            push_row(&self.u);
            push_row(&self.y);
            if let Some(exo) = &self.exogenous {
                push_row(&exo.r);
                push_row(&exo.w);
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Generates `samples` closed-loop steady states.
///
/// Each row solves the loop for its own `(r_t, w_t)`: `u = K S (r - w)`,
/// then `y = G u + w`. Output is a deterministic function of
/// `(cl, samples, seed)`.
pub fn closed_loop_dataset(cl: &ClosedLoop, samples: usize, seed: u64, retain_exogenous: bool) -> Result<Dataset> {
    let (r, w) = sample_exogenous(&cl.noise, samples, seed)?;
    let d = &r - &w;
    let u = &d * cl.derived.ks.transpose();
    let y = &u * cl.g().transpose() + &w;
    if u.iter().chain(y.iter()).any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("generated data contain non-finite values".into()));
    }
    let data = Dataset {
        u,
        y,
        exogenous: retain_exogenous.then_some(Exogenous { r, w }),
        seed,
    };
    if let Some(res) = data.block_map_residual(cl) {
        if res > RES_TOL {
            return Err(Error::InconsistentModel(format!(
                "dataset rows deviate from the closed-loop map by {res:.3e}"
            )));
        }
    }
    Ok(data)
}

/// Empirical second moment `A^T B / T` of two row-aligned records.
pub fn second_moment(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b / a.nrows() as f64
}
