use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecloo::{FitSettings, PriorFamily, PriorSpec};

#[derive(Parser, Debug)]
#[command(name = "ecloo", version, about = "Sparse Bayesian linear regression with EC and approximate leave-one-out CV")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic sparse regression problem (train and test CSVs).
    Synth(SynthArgs),
    /// Fit one model and write the estimate as JSON.
    Fit(FitArgs),
    /// Approximate LOO error, optionally checked against refits.
    Loocv(LoocvArgs),
    /// Grid sweep over beta, rho and sigma_w2.
    Sweep(SweepArgs),
    /// Match rho to target support sizes K, then choose beta by approximate LOO.
    Calibrate(CalibrateArgs),
    /// Run the self-check suite on a seeded synthetic instance.
    Validate(ValidateArgs),
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive finite number, got {s}"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a non-negative finite number, got {s}"))
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("expected a value in [0, 1], got {s}"))
    }
}

fn slab_probability(s: &str) -> Result<f64, String> {
    let v = probability(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("rho must be positive".into())
    }
}

fn at_least_one(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("expected a positive integer, got {s}")),
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_parser = at_least_one)]
    pub n: usize,
    /// Samples per feature; M = round(alpha * N).
    #[arg(long, value_parser = positive)]
    pub alpha: f64,
    #[arg(long, value_parser = probability)]
    pub rho0: f64,
    #[arg(long, value_parser = positive)]
    pub sigma_w0_sq: f64,
    #[arg(long, value_parser = non_negative)]
    pub sigma_n0_sq: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub test_samples: usize,
    /// Directory for `<prefix>_train.csv`, `<prefix>_test.csv` and `<prefix>_truth.csv`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "synth")]
    pub prefix: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    BernoulliGauss,
    BernoulliUniform,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// CSV file with one sample per row and a header.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Subtract column means from the features and the target.
    #[arg(long)]
    pub center: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    #[arg(long, value_parser = positive, default_value_t = FitSettings::default().grad_tol)]
    pub grad_tol: f64,
    #[arg(long, value_parser = positive, default_value_t = FitSettings::default().step_tol)]
    pub step_tol: f64,
    #[arg(long, value_parser = at_least_one, default_value_t = FitSettings::default().max_outer)]
    pub max_outer: usize,
}

impl SolverArgs {
    pub fn settings(&self) -> FitSettings {
        FitSettings {
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
            max_outer: self.max_outer,
            ..FitSettings::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct PriorArgs {
    #[arg(long, value_enum, default_value_t = Family::BernoulliGauss)]
    pub prior: Family,
    /// Prior slab probability.
    #[arg(long, value_parser = slab_probability)]
    pub rho: f64,
    /// Slab variance (Gaussian slab only).
    #[arg(long, value_parser = positive)]
    pub sigma_w2: Option<f64>,
}

pub fn family(kind: Family, sigma_w2: Option<f64>) -> Result<PriorFamily, String> {
    match (kind, sigma_w2) {
        (Family::BernoulliGauss, Some(s)) => Ok(PriorFamily::BernoulliGauss { sigma_w2: s }),
        (Family::BernoulliGauss, None) => Err("--sigma-w2 is required for --prior bernoulli-gauss".into()),
        (Family::BernoulliUniform, None) => Ok(PriorFamily::BernoulliUniform),
        (Family::BernoulliUniform, Some(_)) => Err("--sigma-w2 does not apply to --prior bernoulli-uniform".into()),
    }
}

impl PriorArgs {
    pub fn spec(&self) -> Result<PriorSpec, String> {
        Ok(PriorSpec {
            family: family(self.prior, self.sigma_w2)?,
            rho: self.rho,
        })
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Inverse noise variance.
    #[arg(long, value_parser = positive)]
    pub beta: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "fit.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct WorkerArgs {
    /// Worker threads for refits and grid points.
    #[arg(long, env = "ECLOO_WORKERS", value_parser = at_least_one, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct LoocvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long, value_parser = positive)]
    pub beta: f64,
    /// Also refit once per left-out sample and add the refit residuals.
    #[arg(long)]
    pub literal: bool,
    /// Also report k-fold CV error with this many folds.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub kfold: Option<u64>,
    /// Seed of the k-fold shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub workers: WorkerArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "loo.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Family::BernoulliGauss)]
    pub prior: Family,
    #[arg(long, value_delimiter = ',', required = true, value_parser = positive)]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true, value_parser = slab_probability)]
    pub rhos: Vec<f64>,
    /// Slab variances (Gaussian slab only).
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub sigma_w2s: Vec<f64>,
    #[command(flatten)]
    pub workers: WorkerArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Family::BernoulliUniform)]
    pub prior: Family,
    #[arg(long, value_parser = positive)]
    pub sigma_w2: Option<f64>,
    /// Target expected support sizes.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6", value_parser = positive)]
    pub k_target: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true, value_parser = positive)]
    pub beta_grid: Vec<f64>,
    /// Also run literal LOO at each selected point.
    #[arg(long)]
    pub literal: bool,
    #[command(flatten)]
    pub workers: WorkerArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "calibrate.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long, value_parser = at_least_one, default_value_t = 40)]
    pub n: usize,
    #[arg(long, value_parser = positive, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, value_parser = slab_probability, default_value_t = 0.1)]
    pub rho0: f64,
    #[arg(long, value_parser = positive, default_value_t = 10.0)]
    pub sigma_w0_sq: f64,
    #[arg(long, value_parser = non_negative, default_value_t = 0.1)]
    pub sigma_n0_sq: f64,
    #[arg(long, value_parser = positive, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
