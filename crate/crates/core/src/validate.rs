//! Self-checks on a seeded synthetic instance, as run by `ecloo validate`.
//!
//! Each check compares the library against an independent computation
//! (closed-form Gaussian algebra, dense inverses, finite differences,
//! refits) and reports a pass/fail line with the measured deviation.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, SynthConfig};
use crate::dataset::Dataset;
use crate::ec::{fit, EcProblem, FitResult, FitSettings, Spectrum};
use crate::error::Result;
use crate::loocv::{
    approx_looe, downdated_residual, kfold_cv, literal_loocv, sherman_morrison_downdate, CvOptions,
};
use crate::prior::PriorSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateConfig {
    pub n: usize,
    pub alpha: f64,
    pub rho0: f64,
    pub sigma_w0_sq: f64,
    pub sigma_n0_sq: f64,
    pub seed: u64,
    /// Inverse noise variance used for every fit.
    pub beta: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            n: 40,
            alpha: 0.5,
            rho0: 0.1,
            sigma_w0_sq: 10.0,
            sigma_n0_sq: 0.1,
            seed: 0,
            beta: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn bound(name: &str, value: f64, limit: f64) -> Check {
    Check {
        name: name.into(),
        passed: value <= limit,
        detail: format!("{value:.3e} (limit {limit:.0e})"),
    }
}

fn errored(name: &str, err: impl fmt::Display) -> Check {
    Check {
        name: name.into(),
        passed: false,
        detail: format!("error: {err}"),
    }
}

fn rel_inf(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

/// `(beta X X^T + I / sigma_w2)` and the ridge posterior mean.
pub fn ridge_posterior(dataset: &Dataset, beta: f64, sigma_w2: f64) -> (DMatrix<f64>, DVector<f64>) {
    let x = dataset.x();
    let n = dataset.n_features();
    let a = x * x.transpose() * beta + DMatrix::identity(n, n) / sigma_w2;
    let b = x * dataset.y() * beta;
    let mean = a.clone().cholesky().expect("ridge precision is positive definite").solve(&b);
    (a, mean)
}

/// Classical exact ridge LOO error `(1/2M) sum (r_mu / (1 - S_mumu))^2` with
/// hat matrix `S = beta X^T A^{-1} X`.
pub fn ridge_loo_error(dataset: &Dataset, beta: f64, sigma_w2: f64) -> f64 {
    let (a, mean) = ridge_posterior(dataset, beta, sigma_w2);
    let ainv_x = a.cholesky().expect("positive definite").solve(dataset.x());
    let r = dataset.residuals(&mean);
    let m = dataset.n_samples();
    let sum: f64 = (0..m)
        .map(|mu| {
            let s = beta * dataset.x().column(mu).dot(&ainv_x.column(mu));
            (r[mu] / (1.0 - s)).powi(2)
        })
        .sum();
    0.5 * sum / m as f64
}

fn gaussian_checks(data: &Dataset, beta: f64, sigma_w2: f64, out: &mut Vec<Check>) {
    let prior = PriorSpec::bernoulli_gauss(1.0, sigma_w2).expect("valid prior");
    let f = match fit(data, &prior, beta, None) {
        Ok(f) if f.converged() => f,
        Ok(_) => return out.push(errored("gaussian fit", "did not converge")),
        Err(e) => return out.push(errored("gaussian fit", e)),
    };
    let (a, mean) = ridge_posterior(data, beta, sigma_w2);
    out.push(bound("gaussian posterior mean (rel inf-norm)", rel_inf(f.m(), &mean), 1e-8));
    out.push(bound(
        "gaussian hessian equals ridge precision (rel)",
        (&f.hessian - &a).amax() / a.amax(),
        1e-8,
    ));
    match approx_looe(&f, data) {
        Ok(rep) => {
            let exact = ridge_loo_error(data, beta, sigma_w2);
            out.push(bound(
                "gaussian approximate LOO equals ridge LOO (rel)",
                (rep.eps_loo - exact).abs() / exact,
                1e-6,
            ));
        }
        Err(e) => out.push(errored("gaussian approximate LOO equals ridge LOO (rel)", e)),
    }
}

fn moment_checks(out: &mut Vec<Check>) {
    let priors = [
        PriorSpec::bernoulli_gauss(0.2, 3.0).expect("valid"),
        PriorSpec::bernoulli_uniform(0.3).expect("valid"),
    ];
    let (mut worst_mean, mut worst_var) = (0.0_f64, 0.0_f64);
    for prior in &priors {
        for &e in &[0.5, 2.0, 8.0] {
            for &h in &[-3.0, -0.4, 0.0, 0.9, 5.0] {
                let d = 1e-5;
                let at = |h| prior.moments(h, e).expect("integrable");
                let (c, p, m) = (at(h), at(h + d), at(h - d));
                let fd_mean = (p.log_partition - m.log_partition) / (2.0 * d);
                let fd_var = (p.mean - m.mean) / (2.0 * d);
                worst_mean = worst_mean.max((fd_mean - c.mean).abs() / c.mean.abs().max(1.0));
                worst_var = worst_var.max((fd_var - c.variance).abs() / c.variance.abs().max(1.0));
            }
        }
    }
    out.push(bound("prior mean is d lnZ/dh (rel)", worst_mean, 1e-6));
    out.push(bound("prior variance is d mean/dh (rel)", worst_var, 1e-6));
}

fn gradient_check(data: &Dataset, spectrum: &Spectrum, prior: PriorSpec, beta: f64, at: &DVector<f64>) -> Result<f64> {
    let problem = EcProblem::new(data, spectrum, prior, beta, FitSettings::default())?;
    let base = problem.evaluate(at, None)?;
    let d = 1e-5;
    let mut fd = DVector::zeros(at.len());
    for i in 0..at.len() {
        let mut p = at.clone();
        p[i] += d;
        let mut m = at.clone();
        m[i] -= d;
        let fp = problem.evaluate(&p, Some(&base.tilt))?.free_energy;
        let fm = problem.evaluate(&m, Some(&base.tilt))?.free_energy;
        fd[i] = (fp - fm) / (2.0 * d);
    }
    Ok((&fd - &base.gradient).norm() / base.gradient.norm().max(1e-300))
}

fn fit_checks(data: &Dataset, f: &FitResult, out: &mut Vec<Check>) {
    let s = &f.state;
    let h = &f.hessian;
    let sym = (h - h.transpose()).amax() / h.amax();
    out.push(bound("hessian symmetric (rel)", sym, 1e-10));
    let min_eig = h.clone().symmetric_eigenvalues().min();
    out.push(Check {
        name: "hessian positive definite".into(),
        passed: min_eig > 0.0,
        detail: format!("smallest eigenvalue {min_eig:.3e}"),
    });
    let n = h.nrows();
    out.push(bound(
        "hessian times inverse is identity",
        (h * &f.hessian_inverse - DMatrix::identity(n, n)).amax(),
        1e-8,
    ));

    let mean_res = (0..n)
        .map(|i| match f.prior.moments(s.h[i], s.e) {
            Ok(mo) => (s.m[i] - mo.mean).abs(),
            Err(_) => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    out.push(bound("fixed point m = f(h; E)", mean_res, 1e-8));
    let field = data.x() * data.residuals(&s.m) * f.beta + &s.m * s.e;
    out.push(bound(
        "fixed point h = beta X r + E m (rel)",
        (&s.h - field).amax() / s.h.amax().max(1.0),
        1e-6,
    ));
    let rises = f
        .trace
        .windows(2)
        .filter(|w| w[1].free_energy > w[0].free_energy + 1e-12 * w[0].free_energy.abs().max(1.0))
        .count();
    out.push(Check {
        name: "free energy non-increasing along accepted steps".into(),
        passed: rises == 0,
        detail: format!("{rises} increases over {} steps", f.trace.len()),
    });
}

fn loo_identity_checks(data: &Dataset, f: &FitResult, out: &mut Vec<Check>) {
    let rep = match approx_looe(f, data) {
        Ok(r) => r,
        Err(e) => return out.push(errored("approximate LOO", e)),
    };
    let (mut worst_sm, mut worst_path) = (0.0_f64, 0.0_f64);
    let mut skipped = 0;
    for mu in 0..data.n_samples() {
        let x = data.sample(mu);
        let Ok(sm) = sherman_morrison_downdate(&f.hessian_inverse, &x, f.beta) else {
            skipped += 1;
            continue;
        };
        let direct = (&f.hessian - &x * x.transpose() * f.beta)
            .try_inverse()
            .unwrap_or_else(|| DMatrix::from_element(x.len(), x.len(), f64::NAN));
        worst_sm = worst_sm.max((&sm - &direct).amax() / direct.amax());
        match downdated_residual(f, data, mu) {
            Ok(r) => {
                let a = rep.samples[mu].residual_loo_approx;
                worst_path = worst_path.max((r - a).abs() / a.abs().max(1e-300));
            }
            Err(_) => skipped += 1,
        }
    }
    let mut c = bound("sherman-morrison downdate equals direct inverse (rel)", worst_sm, 1e-8);
    c.detail.push_str(&format!(", {skipped} samples at the floor"));
    out.push(c);
    out.push(bound("downdated and leverage LOO residuals agree (rel)", worst_path, 1e-10));
}

/// Runs every check on the instance described by `config`.
pub fn run_suite(config: &ValidateConfig) -> Result<Vec<Check>> {
    let data = gen_synthetic(&SynthConfig {
        n: config.n,
        alpha: config.alpha,
        rho0: config.rho0,
        sigma_w0_sq: config.sigma_w0_sq,
        sigma_n0_sq: config.sigma_n0_sq,
        seed: config.seed,
        test_samples: 0,
    })?
    .train;
    let beta = config.beta;
    let mut out = Vec::new();

    moment_checks(&mut out);
    let spectrum = Spectrum::new(&data)?;
    let secular = {
        let chi = 0.3 / beta;
        let s = spectrum.solve_lambda(beta, chi)?;
        (spectrum.mean_resolvent(s) - beta * chi).abs() / (beta * chi)
    };
    out.push(bound("secular equation residual (rel)", secular, 1e-12));
    gaussian_checks(&data, beta, config.sigma_w0_sq, &mut out);

    let prior = PriorSpec::bernoulli_gauss(config.rho0, config.sigma_w0_sq)?;
    let f = fit(&data, &prior, beta, None)?;
    out.push(Check {
        name: "sparse fit converged".into(),
        passed: f.converged(),
        detail: format!("{} iterations, gradient {:.3e}", f.state.iterations, f.state.grad_norm),
    });
    let probe = f.m() * 0.5 + DVector::from_fn(f.m().len(), |i, _| 0.01 * ((i % 5) as f64 - 2.0));
    match gradient_check(&data, &spectrum, prior, beta, &probe) {
        Ok(err) => out.push(bound("gradient matches finite differences (rel)", err, 1e-5)),
        Err(e) => out.push(errored("gradient matches finite differences (rel)", e)),
    }
    if f.converged() {
        fit_checks(&data, &f, &mut out);
        loo_identity_checks(&data, &f, &mut out);
    }

    let again = fit(&data, &prior, beta, None)?;
    out.push(Check {
        name: "fit is deterministic".into(),
        passed: again.state == f.state && again.hessian_inverse == f.hessian_inverse,
        detail: "two runs compared bit for bit".into(),
    });

    let cv = CvOptions::default();
    match (
        literal_loocv(&data, &prior, beta, &cv),
        kfold_cv(&data, &prior, beta, data.n_samples(), config.seed, &cv),
    ) {
        (Ok(l), Ok(k)) => out.push(Check {
            name: "k-fold with k = M equals literal LOO".into(),
            passed: l.eps_loo == k.eps_loo,
            detail: format!("{:.6e} vs {:.6e}", l.eps_loo, k.eps_loo),
        }),
        (Err(e), _) | (_, Err(e)) => out.push(errored("k-fold with k = M equals literal LOO", e)),
    }
    Ok(out)
}
