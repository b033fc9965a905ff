//! Hyper-parameter search: grid sweeps over `(beta, rho, sigma_w2)`, calibration
//! of `rho` to a target posterior support size, and `beta` selection by the
//! approximate LOO error.
//!
//! Every grid point is an independent fit and may run on its own worker;
//! results are gathered in grid order so tables do not depend on the worker
//! count. The argmin over a table breaks ties toward the smallest `beta`,
//! then the smallest `rho`, then the smallest `sigma_w2`.

use std::cmp::Ordering;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::error_summary;
use crate::dataset::Dataset;
use crate::ec::{fit_with, FitResult, FitSettings, Spectrum};
use crate::error::{Error, Result};
use crate::loocv::{approx_looe, literal_loocv, CvOptions, LooReport};
use crate::prior::{PriorFamily, PriorSpec};

/// Cartesian grid of hyper-parameters. `sigma_w2_values` must be empty for
/// the flat-slab family, which has no slab variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub beta_values: Vec<f64>,
    pub rho_values: Vec<f64>,
    pub sigma_w2_values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub beta: f64,
    pub rho: f64,
    pub sigma_w2: Option<f64>,
}

impl GridPoint {
    pub fn prior(&self, family: PriorFamily) -> Result<PriorSpec> {
        let family = match self.sigma_w2 {
            Some(s) => family.with_sigma_w2(s),
            None => family,
        };
        let spec = PriorSpec { family, rho: self.rho };
        spec.validate()?;
        Ok(spec)
    }

    fn tie_break(&self, other: &Self) -> Ordering {
        self.beta
            .total_cmp(&other.beta)
            .then(self.rho.total_cmp(&other.rho))
            .then(
                self.sigma_w2
                    .unwrap_or(0.0)
                    .total_cmp(&other.sigma_w2.unwrap_or(0.0)),
            )
    }
}

fn positive_list(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config(format!("{name} grid is empty")));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Config(format!("{name} values must be positive and finite, got {v}")));
    }
    Ok(())
}

impl SweepGrid {
    pub fn new(beta_values: Vec<f64>, rho_values: Vec<f64>, sigma_w2_values: Vec<f64>) -> Self {
        Self {
            beta_values,
            rho_values,
            sigma_w2_values,
        }
    }

    /// A `beta` sweep at fixed prior.
    pub fn betas(beta_values: Vec<f64>, prior: &PriorSpec) -> Self {
        Self {
            beta_values,
            rho_values: vec![prior.rho],
            sigma_w2_values: prior.family.sigma_w2().into_iter().collect(),
        }
    }

    pub fn validate(&self, family: PriorFamily) -> Result<()> {
        positive_list("beta", &self.beta_values)?;
        positive_list("rho", &self.rho_values)?;
        if let Some(r) = self.rho_values.iter().find(|r| **r > 1.0) {
            return Err(Error::Config(format!("rho values must lie in (0, 1], got {r}")));
        }
        match family {
            PriorFamily::BernoulliGauss { .. } => positive_list("sigma_w2", &self.sigma_w2_values),
            PriorFamily::BernoulliUniform if !self.sigma_w2_values.is_empty() => Err(Error::Config(
                "the bernoulli_uniform family takes no sigma_w2 values".into(),
            )),
            PriorFamily::BernoulliUniform => Ok(()),
        }
    }

    /// Grid points with `beta` outermost and `sigma_w2` innermost.
    pub fn points(&self) -> Vec<GridPoint> {
        let sigmas: Vec<Option<f64>> = if self.sigma_w2_values.is_empty() {
            vec![None]
        } else {
            self.sigma_w2_values.iter().map(|s| Some(*s)).collect()
        };
        let mut out = Vec::new();
        for &beta in &self.beta_values {
            for &rho in &self.rho_values {
                for &sigma_w2 in &sigmas {
                    out.push(GridPoint { beta, rho, sigma_w2 });
                }
            }
        }
        out
    }
}

/// One row of a sweep table. Values are NaN when the fit failed outright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub beta: f64,
    pub rho: f64,
    pub sigma_w2: Option<f64>,
    /// Training RSS per sample.
    pub eps: f64,
    /// Approximate LOO error.
    pub eps_loo: f64,
    pub free_energy: f64,
    pub converged: bool,
    pub expected_support: f64,
    pub iterations: usize,
    pub failure: Option<String>,
}

impl SweepRecord {
    pub fn point(&self) -> GridPoint {
        GridPoint {
            beta: self.beta,
            rho: self.rho,
            sigma_w2: self.sigma_w2,
        }
    }

    /// Whether the row takes part in the argmin.
    pub fn usable(&self) -> bool {
        self.converged && self.failure.is_none() && self.eps_loo.is_finite()
    }

    fn failed(point: GridPoint, reason: String) -> Self {
        Self {
            beta: point.beta,
            rho: point.rho,
            sigma_w2: point.sigma_w2,
            eps: f64::NAN,
            eps_loo: f64::NAN,
            free_energy: f64::NAN,
            converged: false,
            expected_support: f64::NAN,
            iterations: 0,
            failure: Some(reason),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    /// Index of the selected row.
    pub best: usize,
}

impl SweepResult {
    pub fn best(&self) -> &SweepRecord {
        &self.records[self.best]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    pub workers: usize,
    pub settings: FitSettings,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            settings: FitSettings::default(),
        }
    }
}

struct Evaluated {
    record: SweepRecord,
    fit: Option<(FitResult, LooReport)>,
}

fn evaluate(
    dataset: &Dataset,
    spectrum: &Spectrum,
    family: PriorFamily,
    point: GridPoint,
    settings: &FitSettings,
    keep: bool,
) -> Evaluated {
    let attempt = || -> Result<(SweepRecord, Option<(FitResult, LooReport)>)> {
        let prior = point.prior(family)?;
        let fit = fit_with(dataset, spectrum, &prior, point.beta, None, settings)?;
        let eps = error_summary(fit.m(), dataset, None)?.eps;
        let mut record = SweepRecord {
            beta: point.beta,
            rho: point.rho,
            sigma_w2: point.sigma_w2,
            eps,
            eps_loo: f64::NAN,
            free_energy: fit.state.free_energy,
            converged: fit.converged(),
            expected_support: fit.expected_support(),
            iterations: fit.state.iterations,
            failure: None,
        };
        if !fit.converged() {
            record.failure = Some("fit did not converge".into());
            return Ok((record, None));
        }
        let report = approx_looe(&fit, dataset)?;
        record.eps_loo = report.eps_loo;
        Ok((record, keep.then_some((fit, report))))
    };
    match attempt() {
        Ok((record, fit)) => Evaluated { record, fit },
        Err(e) => Evaluated {
            record: SweepRecord::failed(point, e.to_string()),
            fit: None,
        },
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn argmin(records: &[SweepRecord]) -> Result<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.usable())
        .min_by(|(_, a), (_, b)| a.eps_loo.total_cmp(&b.eps_loo).then(a.point().tie_break(&b.point())))
        .map(|(i, _)| i)
        .ok_or(Error::AllPointsFailed)
}

fn evaluate_grid(
    dataset: &Dataset,
    family: PriorFamily,
    points: &[GridPoint],
    options: &SweepOptions,
    keep: bool,
) -> Result<Vec<Evaluated>> {
    let spectrum = Spectrum::new(dataset)?;
    Ok(pool(options.workers)?.install(|| {
        points
            .par_iter()
            .map(|p| evaluate(dataset, &spectrum, family, *p, &options.settings, keep))
            .collect()
    }))
}

/// Fits every grid point and reports training error, approximate LOO error
/// and free energy. Failed points stay in the table with their reason.
pub fn sweep(dataset: &Dataset, family: PriorFamily, grid: &SweepGrid, options: &SweepOptions) -> Result<SweepResult> {
    grid.validate(family)?;
    let records: Vec<SweepRecord> = evaluate_grid(dataset, family, &grid.points(), options, false)?
        .into_iter()
        .map(|e| e.record)
        .collect();
    let best = argmin(&records)?;
    Ok(SweepResult { records, best })
}

/// Outcome of [`select_beta`].
#[derive(Clone, Debug)]
pub struct BetaSelection {
    pub beta: f64,
    pub fit: FitResult,
    pub report: LooReport,
    /// One row per distinct `beta`, ascending.
    pub table: Vec<SweepRecord>,
}

/// Picks the `beta` minimising the approximate LOO error at a fixed prior.
/// The grid is sorted and deduplicated first, so the outcome does not depend
/// on its order.
pub fn select_beta(dataset: &Dataset, prior: &PriorSpec, beta_grid: &[f64], options: &SweepOptions) -> Result<BetaSelection> {
    prior.validate()?;
    let mut betas = beta_grid.to_vec();
    positive_list("beta", &betas)?;
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let points: Vec<GridPoint> = betas
        .iter()
        .map(|&beta| GridPoint {
            beta,
            rho: prior.rho,
            sigma_w2: prior.family.sigma_w2(),
        })
        .collect();
    let mut evaluated = evaluate_grid(dataset, prior.family, &points, options, true)?;
    let table: Vec<SweepRecord> = evaluated.iter().map(|e| e.record.clone()).collect();
    let best = argmin(&table)?;
    let (fit, report) = evaluated.swap_remove(best).fit.expect("usable rows keep their fit");
    Ok(BetaSelection {
        beta: betas[best],
        fit,
        report,
        table,
    })
}

/// Options for [`calibrate_rho`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationOptions {
    /// Accept when `|sum pi - K| <= tol * max(1, K)`.
    pub tol: f64,
    pub max_probes: usize,
    pub settings: FitSettings,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_probes: 200,
            settings: FitSettings::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationResult {
    pub k_target: f64,
    pub rho: f64,
    /// `sum_i pi_i` at the returned fit.
    pub achieved_k: f64,
    /// Number of fits performed.
    pub iterations: usize,
    pub beta: f64,
    /// True when a decrease of `sum pi` with `rho` was observed and the
    /// search fell back to grid refinement plus bisection.
    pub fallback: bool,
    /// `(rho, sum pi)` for every probe, in evaluation order.
    pub probes: Vec<(f64, f64)>,
    pub fit: FitResult,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Search bounds on `logit(rho)`.
const LOGIT_LIMIT: f64 = 40.0;

struct Calibrator<'a> {
    dataset: &'a Dataset,
    spectrum: Spectrum,
    family: PriorFamily,
    beta: f64,
    k: f64,
    options: CalibrationOptions,
    /// `(logit rho, sum pi - K, m)` per probe.
    history: Vec<(f64, f64, DVector<f64>)>,
    best: Option<(f64, FitResult)>,
}

impl Calibrator<'_> {
    fn probe(&mut self, t: f64) -> Result<f64> {
        if self.history.len() >= self.options.max_probes {
            return Err(Error::NonConvergence {
                what: "rho calibration",
                iterations: self.history.len(),
            });
        }
        let rho = sigmoid(t);
        let prior = PriorSpec {
            family: self.family,
            rho,
        };
        // Warm start from the probe nearest in logit(rho).
        let warm = self
            .history
            .iter()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
            .map(|h| h.2.clone());
        let mut fit = fit_with(self.dataset, &self.spectrum, &prior, self.beta, warm.as_ref(), &self.options.settings)?;
        if !fit.converged() && warm.is_some() {
            // A warm start can sit in a poor basin after a large jump in rho.
            fit = fit_with(self.dataset, &self.spectrum, &prior, self.beta, None, &self.options.settings)?;
        }
        if !fit.converged() {
            return Err(Error::NonConvergence {
                what: "calibration fit",
                iterations: fit.state.iterations,
            });
        }
        let g = fit.expected_support() - self.k;
        self.history.push((t, g, fit.state.m.clone()));
        if self.best.as_ref().is_none_or(|(b, _)| g.abs() < b.abs()) {
            self.best = Some((g, fit));
        }
        Ok(g)
    }

    fn done(&self, g: f64) -> bool {
        g.abs() <= self.options.tol * self.k.max(1.0)
    }

    fn monotone(&self) -> bool {
        let mut pts: Vec<(f64, f64)> = self.history.iter().map(|h| (h.0, h.1)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let slack = 1e-9 * self.k.max(1.0);
        pts.windows(2).all(|w| w[1].1 >= w[0].1 - slack)
    }
}

/// Finds `rho` such that the converged fit has `sum_i pi_i = K`.
///
/// Works on `logit(rho)`: brackets the root by doubling steps from
/// `rho = K/N`, then runs Illinois regula falsi with each fit warm-started
/// from the nearest earlier probe. If the probes ever show `sum pi`
/// decreasing in `rho` the bracket is re-scanned on a uniform grid and
/// plain bisection finishes the job.
pub fn calibrate_rho(
    dataset: &Dataset,
    beta: f64,
    k_target: f64,
    family: PriorFamily,
    options: &CalibrationOptions,
) -> Result<CalibrationResult> {
    let n = dataset.n_features() as f64;
    if !(k_target > 0.0 && k_target < n) {
        return Err(Error::Config(format!("K must satisfy 0 < K < N = {n}, got {k_target}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    PriorSpec { family, rho: 0.5 }.validate()?;
    let mut cal = Calibrator {
        dataset,
        spectrum: Spectrum::new(dataset)?,
        family,
        beta,
        k: k_target,
        options: *options,
        history: Vec::new(),
        best: None,
    };

    let mut t = logit(k_target / n);
    let mut g = cal.probe(t)?;
    let mut fallback = false;
    if !cal.done(g) {
        // Bracket: (ta, ga < 0) and (tb, gb > 0).
        let dir = if g < 0.0 { 1.0 } else { -1.0 };
        let mut step = 1.0;
        let (mut ta, mut ga, mut tb, mut gb);
        loop {
            let t_next = (t + dir * step).clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
            if t_next == t {
                return Err(Error::Range { target: k_target });
            }
            let g_next = cal.probe(t_next)?;
            if cal.done(g_next) || (g_next > 0.0) != (g > 0.0) {
                if g_next < 0.0 {
                    (ta, ga, tb, gb) = (t_next, g_next, t, g);
                } else {
                    (ta, ga, tb, gb) = (t, g, t_next, g_next);
                }
                g = g_next;
                break;
            }
            t = t_next;
            g = g_next;
            step *= 2.0;
        }

        // Illinois: halve the stale endpoint's value when the same side
        // is kept twice in a row.
        let mut side = 0i8;
        while !cal.done(g) {
            if !fallback && !cal.monotone() {
                fallback = true;
                (ta, ga, tb, gb) = rescan(&mut cal, ta, tb)?;
                if cal.done(ga) || cal.done(gb) {
                    break;
                }
            }
            if (tb - ta).abs() <= 4.0 * f64::EPSILON * ta.abs().max(tb.abs()).max(1.0) {
                return Err(Error::NonConvergence {
                    what: "rho calibration",
                    iterations: cal.history.len(),
                });
            }
            let t = if fallback {
                0.5 * (ta + tb)
            } else {
                let c = tb - gb * (tb - ta) / (gb - ga);
                if c.is_finite() && c > ta.min(tb) && c < ta.max(tb) {
                    c
                } else {
                    0.5 * (ta + tb)
                }
            };
            g = cal.probe(t)?;
            if g < 0.0 {
                ta = t;
                ga = g;
                if side == -1 {
                    gb *= 0.5;
                }
                side = -1;
            } else {
                tb = t;
                gb = g;
                if side == 1 {
                    ga *= 0.5;
                }
                side = 1;
            }
        }
    }
    let (_, fit) = cal.best.take().expect("at least one probe");
    let achieved_k = fit.expected_support();
    let probes = cal.history.iter().map(|h| (sigmoid(h.0), h.1 + k_target)).collect();
    Ok(CalibrationResult {
        k_target,
        rho: fit.prior.rho,
        achieved_k,
        iterations: cal.history.len(),
        beta,
        fallback,
        probes,
        fit,
    })
}

/// Evaluates a uniform grid across the bracket and returns the first
/// sign-changing neighbour pair, ordered as `(ta, ga < 0, tb, gb > 0)`.
fn rescan(cal: &mut Calibrator<'_>, ta: f64, tb: f64) -> Result<(f64, f64, f64, f64)> {
    const CELLS: usize = 8;
    let (lo, hi) = (ta.min(tb), ta.max(tb));
    let mut prev: Option<(f64, f64)> = None;
    for j in 0..=CELLS {
        let t = lo + (hi - lo) * j as f64 / CELLS as f64;
        let g = match cal.history.iter().find(|h| h.0 == t) {
            Some(h) => h.1,
            None => cal.probe(t)?,
        };
        if cal.done(g) {
            return Ok((t, g, t, g));
        }
        if let Some((tp, gp)) = prev {
            if (gp < 0.0) != (g < 0.0) {
                return Ok(if gp < 0.0 { (tp, gp, t, g) } else { (t, g, tp, gp) });
            }
        }
        prev = Some((t, g));
    }
    Err(Error::Range { target: cal.k })
}

/// One column of the calibrate-then-select protocol: `rho` matched to `K`
/// at every candidate `beta`, then the `beta` with the smallest approximate
/// LOO error.
#[derive(Clone, Debug)]
pub struct ProtocolRow {
    pub k_target: f64,
    pub beta: f64,
    pub rho: f64,
    pub achieved_k: f64,
    pub eps_loo_approx: f64,
    /// Literal LOO at the selected `(beta, rho)`, when requested.
    pub eps_loo_literal: Option<f64>,
    /// Training RSS per sample at the selected point.
    pub eps: f64,
    /// Every candidate `beta` with its calibrated `rho`, ascending in `beta`.
    pub candidates: Vec<SweepRecord>,
    /// Set when no `beta` reached the target; the numeric fields are then NaN.
    pub failure: Option<String>,
}

impl ProtocolRow {
    pub fn usable(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtocolOptions {
    pub workers: usize,
    pub calibration: CalibrationOptions,
    /// Also run literal LOO at each selected point.
    pub literal: bool,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            calibration: CalibrationOptions::default(),
            literal: false,
        }
    }
}

fn calibrated_candidate(
    dataset: &Dataset,
    family: PriorFamily,
    k: f64,
    beta: f64,
    options: &CalibrationOptions,
) -> (SweepRecord, Option<FitResult>) {
    let point = GridPoint {
        beta,
        rho: f64::NAN,
        sigma_w2: family.sigma_w2(),
    };
    let attempt = || -> Result<(SweepRecord, FitResult)> {
        let cal = calibrate_rho(dataset, beta, k, family, options)?;
        let report = approx_looe(&cal.fit, dataset)?;
        let eps = error_summary(cal.fit.m(), dataset, None)?.eps;
        let record = SweepRecord {
            beta,
            rho: cal.rho,
            sigma_w2: family.sigma_w2(),
            eps,
            eps_loo: report.eps_loo,
            free_energy: cal.fit.state.free_energy,
            converged: true,
            expected_support: cal.achieved_k,
            iterations: cal.iterations,
            failure: None,
        };
        Ok((record, cal.fit))
    };
    match attempt() {
        Ok((r, f)) => (r, Some(f)),
        Err(e) => (SweepRecord::failed(point, e.to_string()), None),
    }
}

/// For each target support size: calibrate `rho` at every `beta` of the grid,
/// keep the `beta` with the smallest approximate LOO error, and optionally
/// check it with literal LOO. A target no `beta` can reach gives a failed row;
/// only when every target fails is this an error.
pub fn calibrate_and_select(
    dataset: &Dataset,
    family: PriorFamily,
    k_values: &[f64],
    beta_grid: &[f64],
    options: &ProtocolOptions,
) -> Result<Vec<ProtocolRow>> {
    let mut betas = beta_grid.to_vec();
    positive_list("beta", &betas)?;
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    if k_values.is_empty() {
        return Err(Error::Config("no K targets".into()));
    }
    let pool = pool(options.workers)?;
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let mut evaluated: Vec<(SweepRecord, Option<FitResult>)> = pool.install(|| {
            betas
                .par_iter()
                .map(|&beta| calibrated_candidate(dataset, family, k, beta, &options.calibration))
                .collect()
        });
        let candidates: Vec<SweepRecord> = evaluated.iter().map(|e| e.0.clone()).collect();
        let Ok(best) = argmin(&candidates) else {
            // Some targets are out of reach for a given table; report the
            // column as failed and keep going.
            let reasons: Vec<String> = candidates
                .iter()
                .map(|c| format!("beta {}: {}", c.beta, c.failure.as_deref().unwrap_or("unusable")))
                .collect();
            rows.push(ProtocolRow {
                k_target: k,
                beta: f64::NAN,
                rho: f64::NAN,
                achieved_k: f64::NAN,
                eps_loo_approx: f64::NAN,
                eps_loo_literal: options.literal.then_some(f64::NAN),
                eps: f64::NAN,
                candidates,
                failure: Some(reasons.join("; ")),
            });
            continue;
        };
        let fit = evaluated.swap_remove(best).1.expect("usable rows keep their fit");
        let chosen = &candidates[best];
        let eps_loo_literal = if options.literal {
            let cv = CvOptions {
                workers: options.workers,
                settings: options.calibration.settings,
                ..CvOptions::default()
            };
            Some(literal_loocv(dataset, &fit.prior, fit.beta, &cv)?.eps_loo)
        } else {
            None
        };
        rows.push(ProtocolRow {
            k_target: k,
            beta: chosen.beta,
            rho: chosen.rho,
            achieved_k: chosen.expected_support,
            eps_loo_approx: chosen.eps_loo,
            eps_loo_literal,
            eps: chosen.eps,
            candidates,
            failure: None,
        });
    }
    if !rows.iter().any(ProtocolRow::usable) {
        return Err(Error::AllPointsFailed);
    }
    Ok(rows)
}
