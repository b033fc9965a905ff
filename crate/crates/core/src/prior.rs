//! Scalar spike-and-slab prior computations.
//!
//! A prior `(1 - rho) * delta(w) + rho * f(w)` is tilted by `exp(-E w^2 / 2 + h w)`.
//! For the shipped slabs the tilted slab integral is Gaussian in `w`:
//!
//! * Gaussian slab `N(0, s)`: with `d = 1 + E s` and `v = s / d`,
//!   `ln Z_slab = -ln(d) / 2 + h^2 v / 2`, slab mean `h v`, slab variance `v`.
//!   Requires `d > 0`.
//! * Uniform (improper, unit density) slab:
//!   `ln Z_slab = ln(2 pi / E) / 2 + h^2 / (2 E)`, slab mean `h / E`, slab variance `1 / E`.
//!   Requires `E > 0`.
//!
//! Mixing with the spike gives `Z = (1 - rho) + rho Z_slab`, the inclusion
//! probability `pi = rho Z_slab / Z`, mean `pi * slab_mean` and second moment
//! `pi * slab_second`. Everything is carried in the log domain because
//! `h^2 / (2E)` overflows `exp` long before the ratios become ill-defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tilted integral of a slab density: `ln ∫ f(w) exp(-E w²/2 + h w) dw` and
/// the first two moments of the normalised tilted slab.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabTilt {
    pub log_partition: f64,
    pub mean: f64,
    pub second_moment: f64,
    /// `second_moment - mean²`, kept separately so closed forms avoid the cancellation.
    pub variance: f64,
}

impl SlabTilt {
    pub fn from_moments(log_partition: f64, mean: f64, second_moment: f64) -> Self {
        Self {
            log_partition,
            mean,
            second_moment,
            variance: second_moment - mean * mean,
        }
    }
}

/// A symmetric slab density supplied through its tilted moments.
///
/// Implementations must be even in `w`, so that the tilted mean is odd in `h`.
pub trait Slab {
    fn tilt(&self, h: f64, e: f64) -> Result<SlabTilt>;
}

/// Zero-mean Gaussian slab with variance `sigma_w2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSlab {
    pub sigma_w2: f64,
}

impl Slab for GaussianSlab {
    fn tilt(&self, h: f64, e: f64) -> Result<SlabTilt> {
        let d = 1.0 + e * self.sigma_w2;
        if !(d > 0.0) {
            return Err(Error::IntegrabilityViolation(format!(
                "Gaussian slab needs E > -1/sigma_w2, got E = {e}"
            )));
        }
        let v = self.sigma_w2 / d;
        let mean = h * v;
        Ok(SlabTilt {
            log_partition: -0.5 * d.ln() + 0.5 * h * mean,
            mean,
            second_moment: v + mean * mean,
            variance: v,
        })
    }
}

/// Improper flat slab of unit density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformSlab;

impl Slab for UniformSlab {
    fn tilt(&self, h: f64, e: f64) -> Result<SlabTilt> {
        if !(e > 0.0) {
            return Err(Error::IntegrabilityViolation(format!(
                "uniform slab needs E > 0, got E = {e}"
            )));
        }
        let v = 1.0 / e;
        let mean = h * v;
        Ok(SlabTilt {
            log_partition: 0.5 * (LN_2PI - e.ln()) + 0.5 * h * mean,
            mean,
            second_moment: v + mean * mean,
            variance: v,
        })
    }
}

/// Slab family of a spike-and-slab prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorFamily {
    BernoulliGauss { sigma_w2: f64 },
    BernoulliUniform,
}

impl PriorFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PriorFamily::BernoulliGauss { .. } => "bernoulli_gauss",
            PriorFamily::BernoulliUniform => "bernoulli_uniform",
        }
    }

    /// Slab variance for the Gaussian family, `None` for the flat slab.
    pub fn sigma_w2(&self) -> Option<f64> {
        match self {
            PriorFamily::BernoulliGauss { sigma_w2 } => Some(*sigma_w2),
            PriorFamily::BernoulliUniform => None,
        }
    }

    /// Same family with the slab variance replaced; the flat slab ignores it.
    pub fn with_sigma_w2(self, sigma_w2: f64) -> Self {
        match self {
            PriorFamily::BernoulliGauss { .. } => PriorFamily::BernoulliGauss { sigma_w2 },
            PriorFamily::BernoulliUniform => PriorFamily::BernoulliUniform,
        }
    }
}

/// Spike-and-slab prior `(1 - rho) delta(w) + rho f(w)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub family: PriorFamily,
    pub rho: f64,
}

/// Moments of the tilted spike-and-slab prior for one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarMoments {
    pub log_partition: f64,
    /// `f(h; E)`.
    pub mean: f64,
    pub second_moment: f64,
    /// Posterior slab mass.
    pub inclusion_prob: f64,
    /// `second_moment - mean²`, i.e. `∂f/∂h`.
    pub variance: f64,
}

impl PriorSpec {
    pub fn bernoulli_gauss(rho: f64, sigma_w2: f64) -> Result<Self> {
        let spec = Self {
            family: PriorFamily::BernoulliGauss { sigma_w2 },
            rho,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn bernoulli_uniform(rho: f64) -> Result<Self> {
        let spec = Self {
            family: PriorFamily::BernoulliUniform,
            rho,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Domain(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if let PriorFamily::BernoulliGauss { sigma_w2 } = self.family {
            if !(sigma_w2 > 0.0 && sigma_w2.is_finite()) {
                return Err(Error::Domain(format!(
                    "sigma_w2 must be positive and finite, got {sigma_w2}"
                )));
            }
        }
        Ok(())
    }

    /// Smallest tilt precision (exclusive) for which the tilted slab is integrable.
    pub fn min_precision(&self) -> f64 {
        match self.family {
            PriorFamily::BernoulliGauss { sigma_w2 } => -1.0 / sigma_w2,
            PriorFamily::BernoulliUniform => 0.0,
        }
    }

    pub fn moments(&self, h: f64, e: f64) -> Result<ScalarMoments> {
        match self.family {
            PriorFamily::BernoulliGauss { sigma_w2 } => {
                spike_slab_moments(self.rho, &GaussianSlab { sigma_w2 }, h, e)
            }
            PriorFamily::BernoulliUniform => spike_slab_moments(self.rho, &UniformSlab, h, e),
        }
    }

    /// Solves `moments(h, e).mean == m_target` for `h`.
    pub fn invert_mean(&self, m_target: f64, e: f64) -> Result<f64> {
        self.invert_mean_from(m_target, e, None)
    }

    /// As [`PriorSpec::invert_mean`], starting the search from `guess` when given.
    pub fn invert_mean_from(&self, m_target: f64, e: f64, guess: Option<f64>) -> Result<f64> {
        match self.family {
            PriorFamily::BernoulliGauss { sigma_w2 } => {
                invert_spike_slab_mean(self.rho, &GaussianSlab { sigma_w2 }, m_target, e, guess)
            }
            PriorFamily::BernoulliUniform => {
                invert_spike_slab_mean(self.rho, &UniformSlab, m_target, e, guess)
            }
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

/// Tilted moments of `(1 - rho) delta + rho slab`.
pub fn spike_slab_moments<S: Slab + ?Sized>(
    rho: f64,
    slab: &S,
    h: f64,
    e: f64,
) -> Result<ScalarMoments> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho must lie in [0, 1], got {rho}")));
    }
    let tilt = slab.tilt(h, e)?;
    if rho == 0.0 {
        return Ok(ScalarMoments {
            log_partition: 0.0,
            mean: 0.0,
            second_moment: 0.0,
            inclusion_prob: 0.0,
            variance: 0.0,
        });
    }
    if rho == 1.0 {
        return Ok(ScalarMoments {
            log_partition: tilt.log_partition,
            mean: tilt.mean,
            second_moment: tilt.second_moment,
            inclusion_prob: 1.0,
            variance: tilt.variance,
        });
    }
    let log_spike = (-rho).ln_1p();
    let log_slab = rho.ln() + tilt.log_partition;
    let log_partition = log_add_exp(log_spike, log_slab);
    let pi = (log_slab - log_partition).exp();
    let one_minus_pi = (log_spike - log_partition).exp();
    let mean = pi * tilt.mean;
    let variance = pi * tilt.variance + pi * one_minus_pi * tilt.mean * tilt.mean;
    Ok(ScalarMoments {
        log_partition,
        mean,
        second_moment: pi * tilt.second_moment,
        inclusion_prob: pi,
        variance,
    })
}

const INVERT_MAX_ITER: usize = 400;

/// Safeguarded Newton/bisection inversion of the (odd, strictly increasing)
/// tilted mean map. Converges `h` to machine precision, which more than meets
/// `|f(h) - m| <= 1e-12 max(1, |m|)`.
pub fn invert_spike_slab_mean<S: Slab + ?Sized>(
    rho: f64,
    slab: &S,
    m_target: f64,
    e: f64,
    guess: Option<f64>,
) -> Result<f64> {
    if !m_target.is_finite() {
        return Err(Error::Range { target: m_target });
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho must lie in [0, 1], got {rho}")));
    }
    // Also rejects non-integrable tilts when the answer is trivial.
    let slab_var = slab.tilt(0.0, e)?.variance;
    if m_target == 0.0 {
        return Ok(0.0);
    }
    if rho == 0.0 {
        return Err(Error::Range { target: m_target });
    }

    let sign = m_target.signum();
    let target = m_target.abs();
    let tol = 1e-12 * target.max(1.0);

    // The rho = 1 inverse t / v is a lower bound on the root since pi <= 1.
    let floor_guess = if slab_var > 0.0 { target / slab_var } else { 1.0 };
    let mut h = match guess {
        Some(g) if g.is_finite() && g * sign > 0.0 => (g * sign).max(floor_guess),
        _ => floor_guess,
    };
    if !h.is_finite() || h <= 0.0 {
        h = 1.0;
    }

    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    let mut last_width = f64::INFINITY;
    for _ in 0..INVERT_MAX_ITER {
        let mo = spike_slab_moments(rho, slab, h, e)?;
        if !mo.mean.is_finite() || !mo.variance.is_finite() {
            return Err(Error::Range { target: m_target });
        }
        let r = mo.mean - target;
        if r == 0.0 {
            return Ok(sign * h);
        }
        if r < 0.0 {
            lo = h;
        } else {
            hi = h;
        }
        // Newton unless it leaves the bracket or the bracket stopped halving;
        // the mean map is sigmoidal near the spike and plain Newton can cycle.
        let width = hi - lo;
        let mut next = h - r / mo.variance;
        let shrinking = width <= 0.5 * last_width;
        last_width = width;
        if !(next.is_finite() && next > lo && next < hi) || (hi.is_finite() && !shrinking) {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * h
            };
        }
        if !next.is_finite() {
            return Err(Error::Range { target: m_target });
        }
        let scale = h.abs().max(f64::MIN_POSITIVE);
        let stalled = (next - h).abs() <= 4.0 * f64::EPSILON * scale
            || (hi.is_finite() && hi - lo <= 4.0 * f64::EPSILON * hi);
        if stalled {
            if r.abs() <= tol {
                return Ok(sign * h);
            }
            return Err(Error::NonConvergence {
                what: "mean inversion",
                iterations: INVERT_MAX_ITER,
            });
        }
        h = next;
    }
    // Newton is quadratically convergent and bisection halves the bracket,
    // so landing here means the residual plateaued above the tolerance.
    let mo = spike_slab_moments(rho, slab, h, e)?;
    if (mo.mean - target).abs() <= tol {
        return Ok(sign * h);
    }
    Err(Error::NonConvergence {
        what: "mean inversion",
        iterations: INVERT_MAX_ITER,
    })
}
