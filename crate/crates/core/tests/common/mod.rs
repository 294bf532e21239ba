#![allow(dead_code)]

use fo_bias::linalg::identity;
use fo_bias::system::{build_system, ClosedLoop, NoiseModel, NoiseProcess};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Gaussian matrix with 2-norm condition number at most `cond_max`.
pub fn well_conditioned(rng: &mut ChaCha8Rng, n: usize, cond_max: f64) -> DMatrix<f64> {
    loop {
        let m = gaussian_matrix(rng, n, n);
        let sv = m.singular_values();
        if sv.max() / sv.min() <= cond_max {
            return m;
        }
    }
}

/// Symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = gaussian_matrix(rng, n, n).qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| lo + rng.random::<f64>() * (hi - lo)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn random_dim(rng: &mut ChaCha8Rng) -> usize {
    [1, 2, 3, 5][rng.random_range(0..4)]
}

/// Random loop: moderately conditioned gains, disturbance-to-reference power
/// spread over four decades so every verdict occurs.
pub fn random_loop(rng: &mut ChaCha8Rng, n: usize) -> ClosedLoop {
    loop {
        let g = well_conditioned(rng, n, 10.0);
        let k = well_conditioned(rng, n, 10.0) * log_uniform(rng, 0.2, 5.0);
        let sigma_r = spd(rng, n, 0.5, 2.0);
        let sigma_w = spd(rng, n, 0.5, 2.0) * log_uniform(rng, 1e-2, 1e2);
        let noise = NoiseModel::new(sigma_r, sigma_w, NoiseProcess::Iid).unwrap();
        if let Ok(cl) = build_system(g, k, noise) {
            let rd = identity(n) + cl.g() * cl.k();
            let sv = rd.singular_values();
            if sv.max() / sv.min() < 1e3 {
                return cl;
            }
        }
    }
}

/// Loop built to fail: `K = G^T P^-1` makes `G K^-T = P` positive definite,
/// and a dominant disturbance drives the limit model towards `-K^-1`.
pub fn adversarial_loop(rng: &mut ChaCha8Rng, n: usize) -> ClosedLoop {
    loop {
        let g = well_conditioned(rng, n, 10.0);
        let p = spd(rng, n, 0.5, 2.0);
        let k = g.transpose() * p.try_inverse().unwrap() * log_uniform(rng, 0.1, 2.0);
        let sigma_r = spd(rng, n, 0.5, 2.0) * 0.01;
        let sigma_w = spd(rng, n, 0.5, 2.0) * log_uniform(rng, 1.0, 100.0);
        let noise = NoiseModel::new(sigma_r, sigma_w, NoiseProcess::Iid).unwrap();
        if let Ok(cl) = build_system(g, k, noise) {
            return cl;
        }
    }
}
