use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::ec::spectrum::Spectrum;
use crate::ec::tilt::{solve_tilt, Tilt, TiltSettings};
use crate::error::{Error, Result};
use crate::prior::PriorSpec;

thread_local! {
    static FIT_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of EC fits started on the calling thread.
pub fn fit_calls_on_this_thread() -> usize {
    FIT_CALLS.with(Cell::get)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Converged when `|grad|_inf <= grad_tol * max(1, |beta X y|_inf)`.
    pub grad_tol: f64,
    /// Converged when an accepted step moves `m` by at most `step_tol * max(1, |m|_inf)`.
    pub step_tol: f64,
    pub max_outer: usize,
    /// Smallest damping factor tried by the backtracking line search.
    pub min_step: f64,
    /// Lower bound on `M_i - m_i^2` before it is inverted in the Hessian.
    pub variance_floor: f64,
    pub tilt: TiltSettings,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            step_tol: 1e-10,
            max_outer: 500,
            min_step: 2f64.powi(-20),
            variance_floor: 1e-12,
            tilt: TiltSettings::default(),
        }
    }
}

/// Estimate, tilt fields and macroscopic order parameters at one iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct EcState {
    pub m: DVector<f64>,
    pub h: DVector<f64>,
    pub e: f64,
    /// Second moments `M_i`.
    pub mi: DVector<f64>,
    /// `M_i - m_i^2`.
    pub variances: DVector<f64>,
    pub big_q: f64,
    pub q: f64,
    pub chi: f64,
    pub lambda_tilde: f64,
    pub free_energy: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One accepted Newton step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub free_energy: f64,
    pub grad_norm: f64,
    pub step_size: f64,
    /// Diagonal shift added when the Hessian was not positive definite.
    pub shift: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub state: EcState,
    pub hessian: DMatrix<f64>,
    pub hessian_inverse: DMatrix<f64>,
    pub inclusion_probs: DVector<f64>,
    pub settings: FitSettings,
    /// Free energy at the start point followed by one record per accepted step.
    pub trace: Vec<StepRecord>,
    pub beta: f64,
    pub prior: PriorSpec,
}

impl FitResult {
    pub fn m(&self) -> &DVector<f64> {
        &self.state.m
    }

    pub fn converged(&self) -> bool {
        self.state.converged
    }

    /// Expected number of non-zero coefficients, `sum_i pi_i`.
    pub fn expected_support(&self) -> f64 {
        self.inclusion_probs.sum()
    }
}

/// `-beta X (y - X^T m) - E m + h`.
pub fn gradient(m: &DVector<f64>, h: &DVector<f64>, e: f64, dataset: &Dataset, beta: f64) -> DVector<f64> {
    let r = dataset.residuals(m);
    -(dataset.x() * r) * beta - m * e + h
}

/// `beta X X^T + diag(1 / (M_i - m_i^2) - E)`.
pub fn hessian(
    m: &DVector<f64>,
    mi: &DVector<f64>,
    e: f64,
    dataset: &Dataset,
    beta: f64,
    variance_floor: f64,
) -> Result<DMatrix<f64>> {
    let var = DVector::from_iterator(m.len(), mi.iter().zip(m.iter()).map(|(s, mm)| s - mm * mm));
    let gram = dataset.x() * dataset.x().transpose() * beta;
    hessian_from_variances(gram, &var, e, variance_floor)
}

fn hessian_from_variances(
    mut gram: DMatrix<f64>,
    variances: &DVector<f64>,
    e: f64,
    variance_floor: f64,
) -> Result<DMatrix<f64>> {
    for (i, &v) in variances.iter().enumerate() {
        if !(v >= variance_floor) {
            return Err(Error::VarianceCollapse { index: i, variance: v });
        }
        gram[(i, i)] += 1.0 / v - e;
    }
    Ok(gram)
}

/// EC free energy at the extremised tilt, with the additive constant chosen
/// so that a pure Gaussian prior reproduces `-ln Z` exactly.
pub fn free_energy(state: &EcState, dataset: &Dataset, beta: f64, prior: &PriorSpec, spectrum: &Spectrum) -> Result<f64> {
    let n = state.m.len();
    if n != dataset.n_features() || state.h.len() != n || state.mi.len() != n {
        return Err(Error::DimensionMismatch("state does not match dataset".into()));
    }
    let q = state.m.norm_squared() / n as f64;
    let big_q = state.mi.mean();
    if (q - state.q).abs() > 1e-12 * q.max(1.0)
        || (big_q - q - state.chi).abs() > 1e-9 * big_q.max(1.0)
        || !(state.chi > 0.0)
    {
        return Err(Error::Domain("state moments are inconsistent".into()));
    }
    let mut log_z = 0.0;
    for i in 0..n {
        log_z += prior.moments(state.h[i], state.e)?.log_partition;
    }
    Ok(assemble_free_energy(
        dataset,
        spectrum,
        beta,
        &state.m,
        &state.h,
        state.e,
        log_z,
        state.q,
        state.chi,
        state.lambda_tilde,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble_free_energy(
    dataset: &Dataset,
    spectrum: &Spectrum,
    beta: f64,
    m: &DVector<f64>,
    h: &DVector<f64>,
    e: f64,
    log_partition_sum: f64,
    q: f64,
    chi: f64,
    lambda_tilde: f64,
) -> f64 {
    let nf = m.len() as f64;
    let rss = 0.5 * dataset.residuals(m).norm_squared();
    let big_q = q + chi;
    // -N G(-beta chi), G taken on the branch Lambda = -lambda_tilde.
    let minus_n_g = 0.5 * spectrum.log_det_shifted(lambda_tilde) - 0.5 * nf * lambda_tilde * beta * chi
        + 0.5 * nf * (beta * chi).ln()
        + 0.5 * nf;
    beta * rss + minus_n_g - 0.5 * nf * e * big_q + h.dot(m) - log_partition_sum
}

/// An EC problem with the spectrum and `beta X X^T` precomputed.
pub struct EcProblem<'a> {
    dataset: &'a Dataset,
    spectrum: &'a Spectrum,
    prior: PriorSpec,
    beta: f64,
    gram: DMatrix<f64>,
    bxy: DVector<f64>,
    settings: FitSettings,
}

/// Estimate with its extremised tilt, free energy and gradient.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub m: DVector<f64>,
    pub tilt: Tilt,
    pub free_energy: f64,
    pub gradient: DVector<f64>,
}

impl<'a> EcProblem<'a> {
    pub fn new(
        dataset: &'a Dataset,
        spectrum: &'a Spectrum,
        prior: PriorSpec,
        beta: f64,
        settings: FitSettings,
    ) -> Result<Self> {
        prior.validate()?;
        if prior.rho == 0.0 {
            return Err(Error::Domain("rho = 0 leaves no slab to fit".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        if spectrum.len() != dataset.n_features() {
            return Err(Error::DimensionMismatch("spectrum does not match dataset".into()));
        }
        let x = dataset.x();
        let gram = x * x.transpose() * beta;
        let bxy = x * dataset.y() * beta;
        Ok(Self {
            dataset,
            spectrum,
            prior,
            beta,
            gram,
            bxy,
            settings,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    /// Extremises the tilts at `m` and evaluates the free energy and its gradient.
    pub fn evaluate(&self, m: &DVector<f64>, warm: Option<&Tilt>) -> Result<Evaluation> {
        let tilt = solve_tilt(m, &self.prior, self.beta, self.spectrum, warm, &self.settings.tilt)?;
        let free_energy = assemble_free_energy(
            self.dataset,
            self.spectrum,
            self.beta,
            m,
            &tilt.h,
            tilt.e,
            tilt.log_partition_sum,
            tilt.q,
            tilt.chi,
            tilt.lambda_tilde,
        );
        let gradient = &self.gram * m - &self.bxy - m * tilt.e + &tilt.h;
        Ok(Evaluation {
            m: m.clone(),
            tilt,
            free_energy,
            gradient,
        })
    }

    /// Newton Hessian at an evaluated point.
    pub fn hessian(&self, eval: &Evaluation) -> Result<DMatrix<f64>> {
        hessian_from_variances(
            self.gram.clone(),
            &eval.tilt.variances,
            eval.tilt.e,
            self.settings.variance_floor,
        )
    }

    fn grad_threshold(&self) -> f64 {
        self.settings.grad_tol * self.bxy.amax().max(1.0)
    }

    /// Damped Newton minimisation of the EC free energy.
    pub fn fit(&self, init: Option<&DVector<f64>>) -> Result<FitResult> {
        FIT_CALLS.with(|c| c.set(c.get() + 1));
        let n = self.dataset.n_features();
        let m0 = match init {
            Some(v) if v.len() == n => v.clone(),
            Some(v) => {
                return Err(Error::DimensionMismatch(format!(
                    "initial estimate has length {}, expected {n}",
                    v.len()
                )))
            }
            None => DVector::zeros(n),
        };
        let s = &self.settings;
        let mut cur = self.evaluate(&m0, None)?;
        let mut trace = vec![StepRecord {
            free_energy: cur.free_energy,
            grad_norm: cur.gradient.amax(),
            step_size: 0.0,
            shift: 0.0,
        }];
        let threshold = self.grad_threshold();
        let mut converged = false;
        let mut iterations = 0;

        while iterations < s.max_outer {
            let gnorm = cur.gradient.amax();
            if gnorm <= threshold {
                converged = true;
                break;
            }
            let h = self.hessian(&cur)?;
            let (direction, shift) = newton_direction(h, &cur.gradient)?;
            let dir_norm = direction.amax();

            let mut step = 1.0;
            let mut accepted: Option<Evaluation> = None;
            while step >= s.min_step {
                let trial_m = &cur.m + &direction * step;
                match self.evaluate(&trial_m, Some(&cur.tilt)) {
                    Ok(trial) => {
                        let band = 1e-12 * (1.0 + cur.free_energy.abs());
                        let decreased = trial.free_energy < cur.free_energy;
                        let flat = (trial.free_energy - cur.free_energy).abs() <= band
                            && trial.gradient.amax() < gnorm;
                        if trial.free_energy.is_finite() && (decreased || flat) {
                            accepted = Some(trial);
                            break;
                        }
                    }
                    Err(Error::InfeasibleTilt { .. })
                    | Err(Error::IntegrabilityViolation(_))
                    | Err(Error::VarianceCollapse { .. })
                    | Err(Error::NonConvergence { .. }) => {}
                    Err(other) => return Err(other),
                }
                step *= 0.5;
            }
            let Some(next) = accepted else {
                break;
            };
            iterations += 1;
            let moved = step * dir_norm;
            let scale = next.m.amax().max(1.0);
            trace.push(StepRecord {
                free_energy: next.free_energy,
                grad_norm: next.gradient.amax(),
                step_size: step,
                shift,
            });
            cur = next;
            if moved <= s.step_tol * scale {
                converged = true;
                break;
            }
        }
        if !converged && cur.gradient.amax() <= threshold {
            converged = true;
        }
        self.finish(cur, iterations, converged, trace)
    }

    fn finish(&self, cur: Evaluation, iterations: usize, converged: bool, trace: Vec<StepRecord>) -> Result<FitResult> {
        let hessian = self.hessian(&cur)?;
        let hessian_inverse = match hessian.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => hessian.clone().try_inverse().ok_or(Error::SingularHessian)?,
        };
        let t = &cur.tilt;
        let state = EcState {
            grad_norm: cur.gradient.amax(),
            m: cur.m,
            h: t.h.clone(),
            e: t.e,
            mi: t.second_moments.clone(),
            variances: t.variances.clone(),
            big_q: t.big_q,
            q: t.q,
            chi: t.chi,
            lambda_tilde: t.lambda_tilde,
            free_energy: cur.free_energy,
            iterations,
            converged,
        };
        Ok(FitResult {
            state,
            hessian,
            hessian_inverse,
            inclusion_probs: t.inclusion_probs.clone(),
            settings: self.settings,
            trace,
            beta: self.beta,
            prior: self.prior,
        })
    }
}

/// Solves `H d = -g`, shifting the diagonal until `H` factors when it is not
/// positive definite. Returns the direction and the shift used.
fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok((-ch.solve(g), 0.0));
    }
    let scale = h.diagonal().amax().max(1.0);
    let mut shift = 1e-8 * scale;
    for _ in 0..60 {
        let mut shifted = h.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok((-ch.solve(g), shift));
        }
        shift *= 4.0;
    }
    Err(Error::SingularHessian)
}

/// Fits the EC approximation with default settings, computing the spectrum.
pub fn fit(dataset: &Dataset, prior: &PriorSpec, beta: f64, init: Option<&DVector<f64>>) -> Result<FitResult> {
    let spectrum = Spectrum::new(dataset)?;
    fit_with(dataset, &spectrum, prior, beta, init, &FitSettings::default())
}

pub fn fit_with(
    dataset: &Dataset,
    spectrum: &Spectrum,
    prior: &PriorSpec,
    beta: f64,
    init: Option<&DVector<f64>>,
    settings: &FitSettings,
) -> Result<FitResult> {
    EcProblem::new(dataset, spectrum, *prior, beta, *settings)?.fit(init)
}
