//! Adaptive Gauss-Kronrod (7/15) quadrature used as an independent oracle for
//! the closed-form prior moments.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = hw * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * hw, ((k - g) * hw).abs())
}

/// `∫_a^b f` by globally adaptive Gauss-Kronrod: the interval with the
/// largest error estimate is bisected until the total estimate drops below
/// `tol` relative to the integral or the interval budget runs out.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    const MAX_INTERVALS: usize = 4000;
    let mut parts = vec![(a, b, gk15(&f, a, b))];
    loop {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= tol * total.abs().max(f64::MIN_POSITIVE) || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .unwrap();
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, gk15(&f, lo, mid)));
        parts.push((mid, hi, gk15(&f, mid, hi)));
    }
}

/// Reference tilted moments of `(1 - rho) delta + rho slab`, integrating the
/// slab numerically. `log_density` is the slab log density. Returns
/// `(log_partition, mean, second_moment, inclusion_prob)`.
pub fn spike_slab_reference<D: Fn(f64) -> f64>(
    rho: f64,
    log_density: D,
    h: f64,
    e: f64,
    range: (f64, f64),
) -> (f64, f64, f64, f64) {
    // Shift the exponent by its maximum over a coarse grid to avoid overflow.
    let expo = |w: f64| log_density(w) - 0.5 * e * w * w + h * w;
    let (a, b) = range;
    let shift = (0..=4000)
        .map(|k| expo(a + (b - a) * k as f64 / 4000.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-14;
    let z0 = integrate(|w| (expo(w) - shift).exp(), a, b, tol);
    let z1 = integrate(|w| w * (expo(w) - shift).exp(), a, b, tol);
    let z2 = integrate(|w| w * w * (expo(w) - shift).exp(), a, b, tol);
    let log_slab = shift + z0.ln();
    let slab_mean = z1 / z0;
    let slab_second = z2 / z0;
    if rho == 1.0 {
        return (log_slab, slab_mean, slab_second, 1.0);
    }
    let a_ = (1.0 - rho).ln();
    let b_ = rho.ln() + log_slab;
    let hi = a_.max(b_);
    let log_z = hi + ((a_ - hi).exp() + (b_ - hi).exp()).ln();
    let pi = (b_ - log_z).exp();
    (log_z, pi * slab_mean, pi * slab_second, pi)
}

pub fn gaussian_log_density(sigma_w2: f64) -> impl Fn(f64) -> f64 {
    move |w| -0.5 * w * w / sigma_w2 - 0.5 * (2.0 * std::f64::consts::PI * sigma_w2).ln()
}

/// Integration window covering the tilted slab to many standard deviations.
pub fn window(h: f64, e: f64, sigma_w2: Option<f64>) -> (f64, f64) {
    let prec = e + sigma_w2.map_or(0.0, |s| 1.0 / s);
    let centre = h / prec;
    let sd = prec.sqrt().recip();
    let half = (40.0 * sd).max(50.0);
    (centre - half, centre + half)
}
