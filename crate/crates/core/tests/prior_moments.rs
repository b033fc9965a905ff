mod common;

use common::quadrature::{gaussian_log_density, spike_slab_reference, window};
use ecloo::PriorSpec;

// Reference values from 40-digit adaptive quadrature on w in [-50, 50].
const GAUSS_REF_LOG_Z: f64 = -0.304_476_858_933_824_2;
const GAUSS_REF_MEAN: f64 = 0.292_765_689_835_624_8;
const GAUSS_REF_SECOND: f64 = 0.558_916_316_958_92;
const GAUSS_REF_PI: f64 = 0.322_042_258_819_187_3;
// Root of mean(h) = 0.5 for rho = 0.3, sigma_w2 = 10, E = 2.
const INVERT_REF_H: f64 = 2.795_834_384_793_559;

#[test]
fn frozen_reference_moments() {
    let p = PriorSpec::bernoulli_gauss(0.5, 10.0).unwrap();
    let mo = p.moments(1.0, 1.0).unwrap();
    assert!((mo.log_partition - GAUSS_REF_LOG_Z).abs() < 1e-12);
    assert!((mo.mean - GAUSS_REF_MEAN).abs() < 1e-12);
    assert!((mo.second_moment - GAUSS_REF_SECOND).abs() < 1e-12);
    assert!((mo.inclusion_prob - GAUSS_REF_PI).abs() < 1e-12);
}

#[test]
fn frozen_reference_inversion() {
    let p = PriorSpec::bernoulli_gauss(0.3, 10.0).unwrap();
    let h = p.invert_mean(0.5, 2.0).unwrap();
    assert!((h - INVERT_REF_H).abs() < 1e-10, "{h}");
    assert!((p.moments(h, 2.0).unwrap().mean - 0.5).abs() <= 1e-12);
}

#[test]
fn moments_match_quadrature_on_grid() {
    let rhos = [0.05, 0.3, 0.7, 1.0];
    let hs = [-5.0, -2.0, -0.5, 0.0, 0.7, 2.5, 5.0];
    let es = [0.5, 1.0, 2.0, 5.0, 10.0];
    let mut points = 0;
    let mut worst = 0.0_f64;
    let mut check = |p: PriorSpec, h: f64, e: f64, reference: (f64, f64, f64, f64)| {
        let mo = p.moments(h, e).unwrap();
        let err = [
            mo.log_partition - reference.0,
            mo.mean - reference.1,
            mo.second_moment - reference.2,
            mo.inclusion_prob - reference.3,
        ]
        .iter()
        .fold(0.0_f64, |a, d| a.max(d.abs()));
        assert!(err <= 1e-8, "{p:?} h={h} E={e}: {err:e}");
        worst = worst.max(err);
        points += 1;
    };
    for &rho in &rhos {
        for &h in &hs {
            for &e in &es {
                for &s in &[0.5, 3.0, 10.0] {
                    let p = PriorSpec::bernoulli_gauss(rho, s).unwrap();
                    let r = spike_slab_reference(rho, gaussian_log_density(s), h, e, window(h, e, Some(s)));
                    check(p, h, e, r);
                }
                let p = PriorSpec::bernoulli_uniform(rho).unwrap();
                let r = spike_slab_reference(rho, |_| 0.0, h, e, window(h, e, None));
                check(p, h, e, r);
            }
        }
    }
    assert!(points >= 500, "{points} grid points");
    assert!(worst <= 1e-8);
}

#[test]
fn gaussian_slab_allows_negative_precision() {
    // E > -1/sigma_w2 keeps the tilted slab integrable.
    let p = PriorSpec::bernoulli_gauss(0.4, 2.0).unwrap();
    let (h, e) = (0.8, -0.3);
    let r = spike_slab_reference(0.4, gaussian_log_density(2.0), h, e, window(h, e, Some(2.0)));
    let mo = p.moments(h, e).unwrap();
    assert!((mo.mean - r.1).abs() < 1e-8 && (mo.second_moment - r.2).abs() < 1e-8);
    assert!(p.moments(h, -0.6).is_err());
}
