//! Self-consistent tilt fields `(h, E)` for a given estimate `m`.
//!
//! For fixed `E`, each `h_i` solves `f(h_i; E) = m_i`. The shared precision
//! then has to satisfy the `Q`-stationarity of the EC free energy,
//! `E = 1/chi - beta * s(chi)`, where `chi = Q - q` is the mean tilted
//! variance and `s` is the root of the secular equation.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ec::spectrum::Spectrum;
use crate::error::{Error, Result};
use crate::prior::PriorSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltSettings {
    /// Stop when `|T(E) - E| <= tol * max(1, |E|)`.
    pub tol: f64,
    /// Relaxation weight of the damped fixed point `E <- (1 - g) E + g T(E)`,
    /// used whenever the secant step through the last two probes leaves the
    /// current bracket. Bisection takes over after three probes without progress.
    pub damping: f64,
    pub max_inner: usize,
}

impl Default for TiltSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            damping: 0.5,
            max_inner: 500,
        }
    }
}

/// Extremised tilt fields and the macroscopic moments they imply.
#[derive(Clone, Debug, PartialEq)]
pub struct Tilt {
    pub h: DVector<f64>,
    pub e: f64,
    /// Per-coordinate second moments `M_i`.
    pub second_moments: DVector<f64>,
    /// `M_i - m_i^2`.
    pub variances: DVector<f64>,
    pub inclusion_probs: DVector<f64>,
    /// `sum_i ln Z_i(h_i, E)`.
    pub log_partition_sum: f64,
    /// `|m|^2 / N`.
    pub q: f64,
    /// `(1/N) sum_i M_i`.
    pub big_q: f64,
    /// `Q - q`, accumulated as the mean of the variances.
    pub chi: f64,
    pub lambda_tilde: f64,
    /// Number of evaluations of the `E` map.
    pub inner_iterations: usize,
}

struct Probe {
    tilt: Tilt,
    /// `T(E) - E`.
    residual: f64,
}

fn probe(
    m: &DVector<f64>,
    prior: &PriorSpec,
    beta: f64,
    spectrum: &Spectrum,
    e: f64,
    h_guess: Option<&DVector<f64>>,
) -> Result<Probe> {
    let n = m.len();
    let mut h = DVector::zeros(n);
    let mut second = DVector::zeros(n);
    let mut var = DVector::zeros(n);
    let mut pis = DVector::zeros(n);
    let mut log_z = 0.0;
    for i in 0..n {
        let guess = h_guess.map(|g| g[i]);
        let hi = prior.invert_mean_from(m[i], e, guess).map_err(|err| match err {
            Error::Range { .. } => Error::InfeasibleTilt { index: i, value: m[i] },
            other => other,
        })?;
        let mo = prior.moments(hi, e)?;
        h[i] = hi;
        second[i] = mo.second_moment;
        var[i] = mo.variance;
        pis[i] = mo.inclusion_prob;
        log_z += mo.log_partition;
    }
    let nf = n as f64;
    let q = m.norm_squared() / nf;
    let chi = var.sum() / nf;
    if !(chi > 0.0) {
        return Err(Error::VarianceCollapse {
            index: var.imin(),
            variance: chi,
        });
    }
    let lambda_tilde = spectrum.solve_lambda(beta, chi)?;
    // 1/chi - beta * s rewritten without the cancellation between two
    // large terms when chi is small: (1/chi) (1/N) sum lambda / (lambda + s).
    let target = spectrum.mean_saturation(lambda_tilde) / chi;
    Ok(Probe {
        residual: target - e,
        tilt: Tilt {
            h,
            e,
            second_moments: second,
            variances: var,
            inclusion_probs: pis,
            log_partition_sum: log_z,
            q,
            big_q: q + chi,
            chi,
            lambda_tilde,
            inner_iterations: 0,
        },
    })
}

/// Default starting precision: a fraction of the `beta * mean(lambda)` that the
/// map `T` approaches as the variances shrink.
pub(crate) fn initial_precision(prior: &PriorSpec, beta: f64, spectrum: &Spectrum) -> f64 {
    let e = 0.5 * beta * spectrum.mean_eigenvalue();
    if e > prior.min_precision() && e > 0.0 {
        e
    } else {
        prior.min_precision().max(0.0) + 1e-3
    }
}

/// Solves for `(h, E)` at the estimate `m`, optionally warm-started from a
/// nearby tilt.
pub fn solve_tilt(
    m: &DVector<f64>,
    prior: &PriorSpec,
    beta: f64,
    spectrum: &Spectrum,
    warm: Option<&Tilt>,
    settings: &TiltSettings,
) -> Result<Tilt> {
    if m.len() != spectrum.len() {
        return Err(Error::DimensionMismatch(format!(
            "m has length {} but the spectrum has {} eigenvalues",
            m.len(),
            spectrum.len()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite estimate".into()));
    }
    prior.validate()?;
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }

    let mut e = warm
        .map(|w| w.e)
        .filter(|e| *e > prior.min_precision() && e.is_finite())
        .unwrap_or_else(|| initial_precision(prior, beta, spectrum));
    let mut h_guess = warm.map(|w| w.h.clone());
    let converged = |p: &Probe| p.residual.abs() <= settings.tol * p.tilt.e.abs().max(1.0);

    // Sign-annotated bracket gathered from the iterates.
    let mut below: Option<f64> = None; // residual >= 0
    let mut above: Option<f64> = None; // residual <= 0
    let mut last: Option<(f64, f64)> = None;
    let mut best_abs = f64::INFINITY;
    let mut stagnant = 0usize;
    let mut evals = 0usize;
    let floor = prior.min_precision();

    while evals < settings.max_inner {
        let p = probe(m, prior, beta, spectrum, e, h_guess.as_ref())?;
        evals += 1;
        if converged(&p) {
            let mut tilt = p.tilt;
            tilt.inner_iterations = evals;
            return Ok(tilt);
        }
        let r = p.residual;
        if r > 0.0 {
            below = Some(below.map_or(e, |b: f64| b.max(e)));
        } else {
            above = Some(above.map_or(e, |a: f64| a.min(e)));
        }
        if r.abs() < best_abs {
            best_abs = r.abs();
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        h_guess = Some(p.tilt.h.clone());
        if stagnant >= 3 {
            break;
        }
        let damped = e + settings.damping * r;
        // Secant through the last two probes when it stays inside the bracket.
        let secant = last
            .filter(|&(_, r_prev)| r_prev != r)
            .map(|(e_prev, r_prev)| e - r * (e - e_prev) / (r - r_prev))
            .filter(|&c| {
                c.is_finite()
                    && c > floor
                    && below.is_none_or(|b| c > b)
                    && above.is_none_or(|a| c < a)
            });
        last = Some((e, r));
        e = secant.unwrap_or(damped);
    }

    // Bisection on the residual; T(E) lies in [0, beta * lambda_max].
    let mut lo = match below {
        Some(b) => b,
        None => {
            // Walk down towards the integrability floor. For a flat slab the
            // floor is zero and the walk stops far above the denormal range.
            let smallest = if floor < 0.0 {
                floor
            } else {
                1e-14 * (beta * spectrum.lambda_max()).max(1.0)
            };
            let mut cand = if floor < 0.0 { 0.0 } else { e.min(1.0) };
            let give_up = |evals| Error::NonConvergence {
                what: "tilt precision bracket",
                iterations: evals,
            };
            loop {
                let p = probe(m, prior, beta, spectrum, cand, h_guess.as_ref()).map_err(|err| match err {
                    Error::NonConvergence { .. } => give_up(evals + 1),
                    other => other,
                })?;
                evals += 1;
                if p.residual >= 0.0 {
                    break cand;
                }
                cand = if floor < 0.0 { 0.5 * (cand + floor) } else { 0.5 * cand };
                if cand <= smallest || cand <= floor || evals >= settings.max_inner * 2 {
                    return Err(give_up(evals));
                }
            }
        }
    };
    let mut hi = above.unwrap_or_else(|| beta * spectrum.lambda_max() + lo.abs().max(1.0));
    let mut best: Option<Probe> = None;
    while evals < settings.max_inner * 2 {
        let mid = 0.5 * (lo + hi);
        let p = probe(m, prior, beta, spectrum, mid, h_guess.as_ref())?;
        evals += 1;
        let done = converged(&p) || (hi - lo) <= 1e-15 * mid.abs().max(1.0);
        if p.residual > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        h_guess = Some(p.tilt.h.clone());
        if done {
            best = Some(p);
            break;
        }
    }
    match best {
        Some(p) if converged(&p) => {
            let mut tilt = p.tilt;
            tilt.inner_iterations = evals;
            Ok(tilt)
        }
        _ => Err(Error::NonConvergence {
            what: "tilt precision",
            iterations: evals,
        }),
    }
}
