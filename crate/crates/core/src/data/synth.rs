//! Seeded synthetic teacher-student regression data.
//!
//! Every quantity comes from its own ChaCha20 stream of the same 64-bit seed,
//! so regenerating any one of them never depends on how much of another was
//! consumed:
//!
//! | stream | content                        |
//! |--------|--------------------------------|
//! | 0      | true coefficients `w0`         |
//! | 1      | training design matrix         |
//! | 2      | training noise                 |
//! | 3      | held-out design matrix         |
//! | 4      | held-out noise                 |
//!
//! Design entries are drawn sample by sample (`x_1`, then `x_2`, ...).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

const STREAM_W0: u64 = 0;
const STREAM_X: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_X_TEST: u64 = 3;
const STREAM_NOISE_TEST: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub alpha: f64,
    pub rho0: f64,
    pub sigma_w0_sq: f64,
    pub sigma_n0_sq: f64,
    pub seed: u64,
    pub test_samples: usize,
}

impl SynthConfig {
    /// `M = round(alpha N)`.
    pub fn m(&self) -> usize {
        (self.alpha * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || self.m() == 0 {
            return Err(Error::Config(format!(
                "alpha = {} gives no samples for n = {}",
                self.alpha, self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.rho0) {
            return Err(Error::Config(format!("rho0 must lie in [0, 1], got {}", self.rho0)));
        }
        if !(self.sigma_w0_sq > 0.0 && self.sigma_w0_sq.is_finite()) {
            return Err(Error::Config("sigma_w0_sq must be positive".into()));
        }
        if !(self.sigma_n0_sq >= 0.0 && self.sigma_n0_sq.is_finite()) {
            return Err(Error::Config("sigma_n0_sq must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub w0: DVector<f64>,
    /// Indices of the non-zero entries of `w0`, ascending.
    pub support: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Dataset,
    pub truth: GroundTruth,
    /// `None` when `test_samples == 0`.
    pub test: Option<Dataset>,
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn design(seed: u64, id: u64, n: usize, m: usize) -> DMatrix<f64> {
    let mut rng = stream(seed, id);
    let sd = (1.0 / n as f64).sqrt();
    let data: Vec<f64> = (0..n * m)
        .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    // Column-major storage: column mu holds x_mu.
    DMatrix::from_vec(n, m, data)
}

fn responses(x: &DMatrix<f64>, w0: &DVector<f64>, sigma_n0_sq: f64, seed: u64, id: u64) -> DVector<f64> {
    let mut rng = stream(seed, id);
    let sd = sigma_n0_sq.sqrt();
    let mut y = x.tr_mul(w0);
    for v in y.iter_mut() {
        let noise: f64 = StandardNormal.sample(&mut rng);
        *v += sd * noise;
    }
    y
}

/// Draws `X_{i mu} ~ N(0, 1/N)`, `w0_i ~ (1 - rho0) delta + rho0 N(0, sigma_w0^2)`
/// and `y = X^T w0 + n` with `n_mu ~ N(0, sigma_n0^2)`.
pub fn gen_synthetic(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let n = config.n;
    let m = config.m();

    let mut rng = stream(config.seed, STREAM_W0);
    let sd_w = config.sigma_w0_sq.sqrt();
    let mut w0 = DVector::zeros(n);
    let mut support = Vec::new();
    for i in 0..n {
        // Both draws are always taken so the stream stays aligned across rho0.
        let u: f64 = rng.random();
        let z: f64 = StandardNormal.sample(&mut rng);
        if u < config.rho0 {
            w0[i] = sd_w * z;
            support.push(i);
        }
    }

    let x = design(config.seed, STREAM_X, n, m);
    let y = responses(&x, &w0, config.sigma_n0_sq, config.seed, STREAM_NOISE);
    let train = Dataset::new(x, y)?;

    let test = if config.test_samples > 0 {
        let xt = design(config.seed, STREAM_X_TEST, n, config.test_samples);
        let yt = responses(&xt, &w0, config.sigma_n0_sq, config.seed, STREAM_NOISE_TEST);
        Some(Dataset::new(xt, yt)?)
    } else {
        None
    };

    Ok(SyntheticData {
        train,
        truth: GroundTruth { w0, support },
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seed: u64) -> SynthConfig {
        SynthConfig {
            n: 50,
            alpha: 0.5,
            rho0: 0.2,
            sigma_w0_sq: 10.0,
            sigma_n0_sq: 0.1,
            seed,
            test_samples: 7,
        }
    }

    #[test]
    fn noiseless_empty_support_gives_zero_response() {
        let c = SynthConfig {
            rho0: 0.0,
            sigma_n0_sq: 0.0,
            ..config(3)
        };
        let d = gen_synthetic(&c).unwrap();
        assert!(d.train.y().iter().all(|&v| v == 0.0));
        assert!(d.truth.support.is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = gen_synthetic(&config(11)).unwrap();
        let b = gen_synthetic(&config(11)).unwrap();
        let bits = |d: &Dataset| -> Vec<u64> { d.x().iter().chain(d.y().iter()).map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&a.train), bits(&b.train));
        assert_eq!(bits(a.test.as_ref().unwrap()), bits(b.test.as_ref().unwrap()));
        assert_eq!(a.truth, b.truth);
        let c = gen_synthetic(&config(12)).unwrap();
        assert_ne!(bits(&a.train), bits(&c.train));
    }

    #[test]
    fn truth_is_zero_off_support() {
        let d = gen_synthetic(&config(5)).unwrap();
        for i in 0..50 {
            assert_eq!(d.truth.w0[i] != 0.0, d.truth.support.contains(&i));
        }
        assert_eq!(d.train.n_samples(), 25);
        assert_eq!(d.test.unwrap().n_samples(), 7);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(gen_synthetic(&SynthConfig { alpha: 0.001, ..config(1) }).is_err());
        assert!(gen_synthetic(&SynthConfig { rho0: 1.5, ..config(1) }).is_err());
        assert!(gen_synthetic(&SynthConfig { sigma_n0_sq: -1.0, ..config(1) }).is_err());
    }
}
