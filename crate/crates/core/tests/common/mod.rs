#![allow(dead_code)]

pub mod quadrature;

use ecloo::data::{gen_synthetic, SynthConfig};
use ecloo::Dataset;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// `n` features by `m` samples with standard normal entries scaled by `1/sqrt(n)`,
/// and responses from a dense random weight vector plus noise.
pub fn random_dataset(n: usize, m: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sd = (n as f64).sqrt().recip();
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let x = DMatrix::from_fn(n, m, |_, _| sd * draw());
    let w = DVector::from_fn(n, |_, _| draw());
    let noise = DVector::from_fn(m, |_, _| 0.3 * draw());
    let y = x.tr_mul(&w) + noise;
    Dataset::new(x, y).unwrap()
}

pub fn synthetic(n: usize, alpha: f64, seed: u64) -> Dataset {
    gen_synthetic(&SynthConfig {
        n,
        alpha,
        rho0: 0.1,
        sigma_w0_sq: 10.0,
        sigma_n0_sq: 0.1,
        seed,
        test_samples: 0,
    })
    .unwrap()
    .train
}

pub fn rel_inf(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

/// Exact `-ln Z` of the Gaussian model `w ~ N(0, sigma_w2 I)`,
/// `Z = ∫ N(w) exp(-beta/2 |y - X^T w|^2) dw`.
pub fn gaussian_neg_log_evidence(data: &Dataset, beta: f64, sigma_w2: f64) -> f64 {
    let x = data.x();
    let n = data.n_features();
    let a = x * x.transpose() * beta + DMatrix::identity(n, n) / sigma_w2;
    let b = x * data.y() * beta;
    let ch = a.cholesky().unwrap();
    let logdet_a: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let quad = b.dot(&ch.solve(&b));
    0.5 * (logdet_a + n as f64 * sigma_w2.ln()) + 0.5 * beta * data.y().norm_squared() - 0.5 * quad
}
