mod common;

use common::{random_dataset, synthetic};
use ecloo::loocv::{
    approx_looe, downdated_residual, kfold_cv, literal_loocv, loo_estimator, sherman_morrison_downdate, CvOptions,
    LooMethod,
};
use ecloo::validate::{ridge_loo_error, ridge_posterior};
use ecloo::{fit, Dataset, PriorSpec};
use nalgebra::{DMatrix, DVector};

#[test]
fn gaussian_prior_reproduces_ridge_loo() {
    for seed in 0..5 {
        let d = random_dataset(20 + 5 * seed as usize, 30, seed);
        let (beta, s2) = (3.0, 2.0);
        let f = fit(&d, &PriorSpec::bernoulli_gauss(1.0, s2).unwrap(), beta, None).unwrap();
        let rep = approx_looe(&f, &d).unwrap();
        let exact = ridge_loo_error(&d, beta, s2);
        assert!((rep.eps_loo - exact).abs() <= 1e-6 * exact, "{} vs {exact}", rep.eps_loo);
    }
}

#[test]
fn gaussian_literal_loo_equals_ridge_loo() {
    let d = random_dataset(10, 16, 21);
    let (beta, s2) = (2.0, 1.0);
    let lit = literal_loocv(&d, &PriorSpec::bernoulli_gauss(1.0, s2).unwrap(), beta, &CvOptions::default()).unwrap();
    let exact = ridge_loo_error(&d, beta, s2);
    assert!((lit.eps_loo - exact).abs() <= 1e-7 * exact);
}

#[test]
fn downdate_matches_direct_inverse() {
    let d = synthetic(40, 0.5, 22);
    let f = fit(&d, &PriorSpec::bernoulli_gauss(0.1, 10.0).unwrap(), 10.0, None).unwrap();
    for mu in 0..d.n_samples() {
        let x = d.sample(mu);
        let Ok(sm) = sherman_morrison_downdate(&f.hessian_inverse, &x, f.beta) else {
            continue;
        };
        let direct = (&f.hessian - &x * x.transpose() * f.beta).try_inverse().unwrap();
        assert!((&sm - &direct).amax() <= 1e-8 * direct.amax());
    }
}

#[test]
fn two_residual_paths_agree() {
    let d = synthetic(50, 0.5, 23);
    let f = fit(&d, &PriorSpec::bernoulli_uniform(0.1).unwrap(), 10.0, None).unwrap();
    let rep = approx_looe(&f, &d).unwrap();
    for mu in 0..d.n_samples() {
        let via_cavity = d.y()[mu] - d.sample(mu).dot(&loo_estimator(&f, &d, mu).unwrap().m_loo);
        let via_downdate = downdated_residual(&f, &d, mu).unwrap();
        let a = rep.samples[mu].residual_loo_approx;
        assert!((via_cavity - a).abs() <= 1e-10 * a.abs().max(1e-3));
        assert!((via_downdate - a).abs() <= 1e-10 * a.abs().max(1e-3));
    }
}

/// Mean over samples of `|m_{->mu} - m_refit|_inf`.
fn cavity_vs_refit(n: usize, m: usize, seed: u64) -> f64 {
    let d = random_dataset(n, m, seed);
    let prior = PriorSpec::bernoulli_gauss(0.5, 1.0).unwrap();
    let f = fit(&d, &prior, 4.0, None).unwrap();
    (0..m)
        .map(|mu| {
            let est = loo_estimator(&f, &d, mu).unwrap();
            let refit = fit(&d.without_samples(&[mu]).unwrap(), &prior, 4.0, Some(f.m())).unwrap();
            (&est.m_loo - refit.m()).amax()
        })
        .sum::<f64>()
        / m as f64
}

#[test]
fn cavity_estimate_tracks_refits_and_improves_with_size() {
    let small: f64 = (0..4).map(|s| cavity_vs_refit(15, 8, s)).sum::<f64>() / 4.0;
    let large: f64 = (0..4).map(|s| cavity_vs_refit(120, 64, s)).sum::<f64>() / 4.0;
    assert!(small < 0.2, "{small}");
    assert!(large < small, "{large} vs {small}");
}

#[test]
fn kfold_with_one_sample_per_fold_is_literal() {
    let d = synthetic(30, 0.5, 24);
    let prior = PriorSpec::bernoulli_gauss(0.1, 10.0).unwrap();
    let lit = literal_loocv(&d, &prior, 10.0, &CvOptions::default()).unwrap();
    let k = kfold_cv(&d, &prior, 10.0, d.n_samples(), 99, &CvOptions::default()).unwrap();
    assert_eq!(lit.eps_loo, k.eps_loo);
    assert_eq!(lit.method, LooMethod::Literal);
}

#[test]
fn two_fold_toy_matches_hand_ridge_fits() {
    let x = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, -0.3, 0.8, 0.2, -1.0, 0.7, 0.4]);
    let y = DVector::from_vec(vec![0.9, -0.6, 0.3, 1.1]);
    let d = Dataset::new(x, y).unwrap();
    let (beta, s2) = (2.0, 1.5);
    let prior = PriorSpec::bernoulli_gauss(1.0, s2).unwrap();
    let rep = kfold_cv(&d, &prior, beta, 2, 5, &CvOptions::default()).unwrap();
    let folds = ecloo::loocv::kfold_partition(4, 2, 5).unwrap();
    let mut sum = 0.0;
    for held in &folds {
        let (_, w) = ridge_posterior(&d.without_samples(held).unwrap(), beta, s2);
        for &mu in held {
            sum += (d.y()[mu] - d.sample(mu).dot(&w)).powi(2);
        }
    }
    let expected = sum / 8.0;
    assert!((rep.eps_loo - expected).abs() <= 1e-10 * expected, "{} vs {expected}", rep.eps_loo);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

#[test]
fn kfold_error_is_close_to_loo_error() {
    let prior = PriorSpec::bernoulli_gauss(0.1, 10.0).unwrap();
    let (mut loo, mut five, mut ten) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..20 {
        let d = synthetic(60, 0.5, 100 + seed);
        let f = fit(&d, &prior, 10.0, None).unwrap();
        loo.push(approx_looe(&f, &d).unwrap().eps_loo);
        five.push(kfold_cv(&d, &prior, 10.0, 5, seed, &CvOptions::default()).unwrap().eps_loo);
        ten.push(kfold_cv(&d, &prior, 10.0, 10, seed, &CvOptions::default()).unwrap().eps_loo);
    }
    // Medians, since a near-unit leverage at this size can inflate a single
    // seed's approximate error. Smaller training folds bias k-fold upwards.
    let loo = median(loo);
    for cv in [median(five), median(ten)] {
        assert!((cv - loo).abs() <= 0.35 * loo, "{cv} vs {loo}");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let d = synthetic(40, 0.5, 25);
    let prior = PriorSpec::bernoulli_gauss(0.1, 10.0).unwrap();
    let one = literal_loocv(&d, &prior, 10.0, &CvOptions::default()).unwrap();
    let four = literal_loocv(&d, &prior, 10.0, &CvOptions { workers: 4, ..CvOptions::default() }).unwrap();
    assert_eq!(one.samples, four.samples);
    assert_eq!(one.eps_loo, four.eps_loo);
}
