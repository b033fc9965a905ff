//! Bayesian sparse linear regression with the expectation-consistent (EC)
//! approximation, and a semi-analytic leave-one-out error computed from a
//! single fit.
//!
//! - [`prior`]: tilted spike-and-slab moments and their inversion
//! - [`ec`]: spectrum, tilt self-consistency and the Newton solver
//! - [`loocv`]: approximate LOO error plus literal LOO and k-fold harnesses
//! - [`hyper`]: grid sweeps, sparsity calibration and `beta` selection
//! - [`data`]: synthetic generator, CSV ingestion, error summaries, reports
//! - [`validate`]: self-checks run by the `validate` command

// `!(x > 0.0)` is used on purpose so that NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dataset;
pub mod ec;
pub mod error;
pub mod hyper;
pub mod loocv;
pub mod prior;
pub mod validate;

pub use dataset::Dataset;
pub use ec::{fit, EcState, FitResult, FitSettings, Spectrum};
pub use error::{Error, Result};
pub use prior::{PriorFamily, PriorSpec, ScalarMoments};
