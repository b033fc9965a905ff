//! Leave-one-out error: the semi-analytic formula from a single EC fit, and
//! literal LOO / k-fold harnesses that refit on the reduced datasets.
//!
//! Removing sample `mu` perturbs the tilt fields by the cavity field
//! `dh = beta x_mu r_mu` (with `r_mu = y_mu - x_mu^T m`). Linear response
//! through the downdated Hessian `(H - beta x_mu x_mu^T)^{-1}` then gives
//! the LOO residual `r_mu / (1 - beta x_mu^T H^{-1} x_mu)`, so only the
//! inverse Hessian of the full fit is needed.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ec::{fit_with, FitResult, FitSettings, Spectrum};
use crate::error::{Error, Result};
use crate::prior::PriorSpec;

/// Smallest `|1 - leverage|` used as a denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LooMethod {
    Approx,
    Literal,
    KFold(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LooSample {
    pub index: usize,
    /// `y_mu - x_mu^T m` at the full fit.
    pub residual_full: f64,
    /// `beta x_mu^T H^{-1} x_mu`.
    pub leverage: f64,
    /// `residual_full / (1 - leverage)`, denominator clipped at the floor.
    pub residual_loo_approx: f64,
    /// Held-out residual from a refit without the sample, when one was run.
    pub residual_loo_literal: Option<f64>,
    pub cavity_field: Option<DVector<f64>>,
    pub flagged: bool,
    /// Why the refit for this sample failed, if it did.
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct LooReport {
    pub eps_loo: f64,
    pub samples: Vec<LooSample>,
    /// Samples whose leverage denominator was clipped.
    pub flagged: Vec<usize>,
    /// Samples whose refit failed; excluded from `eps_loo`.
    pub failed: Vec<usize>,
    pub method: LooMethod,
    pub wall_time: Duration,
}

impl LooSample {
    /// Residual this sample contributes under `method`.
    pub fn residual_loo(&self, method: LooMethod) -> Option<f64> {
        match method {
            LooMethod::Approx => Some(self.residual_loo_approx),
            LooMethod::Literal | LooMethod::KFold(_) => self.residual_loo_literal,
        }
    }
}

impl LooReport {
    /// `(1/2M') sum residual_loo^2` over the samples that have a residual.
    pub fn recompute_eps(&self) -> f64 {
        let (sum, count) = self
            .samples
            .iter()
            .filter_map(|s| s.residual_loo(self.method))
            .fold((0.0, 0usize), |(s, c), r| (s + r * r, c + 1));
        0.5 * sum / count as f64
    }

    /// Approximate-formula error over all samples, regardless of `method`.
    pub fn eps_loo_approx(&self) -> f64 {
        let sum: f64 = self.samples.iter().map(|s| s.residual_loo_approx.powi(2)).sum();
        0.5 * sum / self.samples.len() as f64
    }
}

/// Options shared by the refitting harnesses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvOptions {
    pub workers: usize,
    pub settings: FitSettings,
    /// Maximum fraction of folds allowed to fail.
    pub max_failure_fraction: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            settings: FitSettings::default(),
            max_failure_fraction: 0.05,
        }
    }
}

fn check_fit(fit: &FitResult, dataset: &Dataset) -> Result<()> {
    if !fit.converged() {
        return Err(Error::NotConverged);
    }
    if fit.m().len() != dataset.n_features() {
        return Err(Error::DimensionMismatch("fit does not match dataset".into()));
    }
    if fit.hessian_inverse.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularHessian);
    }
    Ok(())
}

fn clipped(denominator: f64) -> (f64, bool) {
    if denominator.abs() < DENOMINATOR_FLOOR {
        let sign = if denominator < 0.0 { -1.0 } else { 1.0 };
        (sign * DENOMINATOR_FLOOR, true)
    } else {
        (denominator, false)
    }
}

fn approx_samples(fit: &FitResult, dataset: &Dataset) -> Vec<LooSample> {
    let beta = fit.beta;
    let residuals = dataset.residuals(fit.m());
    // One matrix product gives H^{-1} x_mu for every sample.
    let hinv_x = &fit.hessian_inverse * dataset.x();
    (0..dataset.n_samples())
        .map(|mu| {
            let leverage = beta * dataset.x().column(mu).dot(&hinv_x.column(mu));
            let (denominator, flagged) = clipped(1.0 - leverage);
            LooSample {
                index: mu,
                residual_full: residuals[mu],
                leverage,
                residual_loo_approx: residuals[mu] / denominator,
                residual_loo_literal: None,
                cavity_field: None,
                flagged,
                failure: None,
            }
        })
        .collect()
}

/// Approximate LOO error from a converged full-data fit. No refits.
pub fn approx_looe(fit: &FitResult, dataset: &Dataset) -> Result<LooReport> {
    let start = Instant::now();
    check_fit(fit, dataset)?;
    let samples = approx_samples(fit, dataset);
    let flagged = samples.iter().filter(|s| s.flagged).map(|s| s.index).collect();
    let mut report = LooReport {
        eps_loo: 0.0,
        samples,
        flagged,
        failed: Vec::new(),
        method: LooMethod::Approx,
        wall_time: Duration::ZERO,
    };
    report.eps_loo = report.recompute_eps();
    report.wall_time = start.elapsed();
    Ok(report)
}

/// `(H - beta x x^T)^{-1}` from `H^{-1}` by the Sherman-Morrison formula.
pub fn sherman_morrison_downdate(
    hessian_inverse: &DMatrix<f64>,
    x: &DVector<f64>,
    beta: f64,
) -> std::result::Result<DMatrix<f64>, f64> {
    let u = hessian_inverse * x;
    let denominator = 1.0 - beta * x.dot(&u);
    if denominator.abs() < DENOMINATOR_FLOOR {
        return Err(denominator);
    }
    Ok(hessian_inverse + (&u * u.transpose()) * (beta / denominator))
}

/// Cavity quantities for one left-out sample.
#[derive(Clone, Debug)]
pub struct LooEstimate {
    /// `m_{->mu} = m - C dh`.
    pub m_loo: DVector<f64>,
    /// `dh_{mu -> i} = beta x_{i mu} r_mu`.
    pub cavity_field: DVector<f64>,
    /// `C = (H - beta x_mu x_mu^T)^{-1}`.
    pub downdated_inverse: DMatrix<f64>,
}

/// Perturbative LOO estimator for sample `mu`.
pub fn loo_estimator(fit: &FitResult, dataset: &Dataset, mu: usize) -> Result<LooEstimate> {
    check_fit(fit, dataset)?;
    if mu >= dataset.n_samples() {
        return Err(Error::DimensionMismatch(format!("sample {mu} out of range")));
    }
    let beta = fit.beta;
    let x = dataset.sample(mu);
    let r = dataset.y()[mu] - x.dot(fit.m());
    let cavity_field = &x * (beta * r);
    let downdated_inverse = sherman_morrison_downdate(&fit.hessian_inverse, &x, beta)
        .map_err(|denominator| Error::RankOneSingularity { mu, denominator })?;
    let m_loo = fit.m() - &downdated_inverse * &cavity_field;
    Ok(LooEstimate {
        m_loo,
        cavity_field,
        downdated_inverse,
    })
}

/// Residual on sample `mu` via `(1 + beta x^T C x) r`, the path that goes
/// through the downdated inverse.
pub fn downdated_residual(fit: &FitResult, dataset: &Dataset, mu: usize) -> Result<f64> {
    let est = loo_estimator(fit, dataset, mu)?;
    let x = dataset.sample(mu);
    let r = dataset.y()[mu] - x.dot(fit.m());
    Ok((1.0 + fit.beta * x.dot(&(&est.downdated_inverse * &x))) * r)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Fit on the training part of a fold and return held-out residuals.
fn fold_residuals(
    dataset: &Dataset,
    held_out: &[usize],
    prior: &PriorSpec,
    beta: f64,
    warm: &DVector<f64>,
    settings: &FitSettings,
) -> std::result::Result<Vec<f64>, String> {
    let m = if held_out.len() == dataset.n_samples() {
        // Nothing left to train on: the symmetric prior has mean zero.
        DVector::zeros(dataset.n_features())
    } else {
        let train = dataset.without_samples(held_out).map_err(|e| e.to_string())?;
        let spectrum = Spectrum::new(&train).map_err(|e| e.to_string())?;
        let fit = fit_with(&train, &spectrum, prior, beta, Some(warm), settings).map_err(|e| e.to_string())?;
        if !fit.converged() {
            return Err("refit did not converge".into());
        }
        fit.state.m
    };
    Ok(held_out
        .iter()
        .map(|&mu| dataset.y()[mu] - dataset.x().column(mu).dot(&m))
        .collect())
}

fn run_folds(
    dataset: &Dataset,
    prior: &PriorSpec,
    beta: f64,
    folds: &[Vec<usize>],
    method: LooMethod,
    options: &CvOptions,
) -> Result<LooReport> {
    let start = Instant::now();
    let spectrum = Spectrum::new(dataset)?;
    let full = fit_with(dataset, &spectrum, prior, beta, None, &options.settings)?;
    let mut samples = if full.converged() {
        approx_samples(&full, dataset)
    } else {
        let residuals = dataset.residuals(full.m());
        (0..dataset.n_samples())
            .map(|mu| LooSample {
                index: mu,
                residual_full: residuals[mu],
                leverage: f64::NAN,
                residual_loo_approx: f64::NAN,
                residual_loo_literal: None,
                cavity_field: None,
                flagged: false,
                failure: None,
            })
            .collect()
    };

    let warm = full.state.m.clone();
    let outcomes: Vec<std::result::Result<Vec<f64>, String>> = pool(options.workers)?.install(|| {
        folds
            .par_iter()
            .map(|held_out| fold_residuals(dataset, held_out, prior, beta, &warm, &options.settings))
            .collect()
    });

    let mut failed_folds = 0;
    for (held_out, outcome) in folds.iter().zip(outcomes) {
        match outcome {
            Ok(res) => {
                for (&mu, r) in held_out.iter().zip(res) {
                    samples[mu].residual_loo_literal = Some(r);
                }
            }
            Err(reason) => {
                failed_folds += 1;
                for &mu in held_out {
                    samples[mu].failure = Some(reason.clone());
                }
            }
        }
    }
    if failed_folds as f64 > options.max_failure_fraction * folds.len() as f64 {
        return Err(Error::TooManyFoldFailures {
            failed: failed_folds,
            total: folds.len(),
        });
    }
    let flagged = samples.iter().filter(|s| s.flagged).map(|s| s.index).collect();
    let failed = samples.iter().filter(|s| s.failure.is_some()).map(|s| s.index).collect();
    let mut report = LooReport {
        eps_loo: 0.0,
        samples,
        flagged,
        failed,
        method,
        wall_time: Duration::ZERO,
    };
    report.eps_loo = report.recompute_eps();
    report.wall_time = start.elapsed();
    Ok(report)
}

/// Literal LOO: one refit per left-out sample, warm-started from the full fit.
pub fn literal_loocv(dataset: &Dataset, prior: &PriorSpec, beta: f64, options: &CvOptions) -> Result<LooReport> {
    let folds: Vec<Vec<usize>> = (0..dataset.n_samples()).map(|mu| vec![mu]).collect();
    run_folds(dataset, prior, beta, &folds, LooMethod::Literal, options)
}

/// Seeded permutation of the samples cut into `k` contiguous blocks; the
/// first `M mod k` blocks get one extra sample. Indices inside a block are
/// sorted.
pub fn kfold_partition(m: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > m {
        return Err(Error::Config(format!("k must satisfy 2 <= k <= M = {m}, got {k}")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let base = m / k;
    let extra = m % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// k-fold CV error `(1/2M) sum_mu r_mu^2` pooled over the held-out blocks.
pub fn kfold_cv(
    dataset: &Dataset,
    prior: &PriorSpec,
    beta: f64,
    k: usize,
    seed: u64,
    options: &CvOptions,
) -> Result<LooReport> {
    let folds = kfold_partition(dataset.n_samples(), k, seed)?;
    run_folds(dataset, prior, beta, &folds, LooMethod::KFold(k), options)
}
