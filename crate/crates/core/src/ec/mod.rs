//! Expectation-consistent free energy minimisation.
//!
//! The estimator is the minimiser of the EC free energy over `m`, found by
//! damped Newton iterations. At every iterate the tilt fields `(h, E)` are
//! re-extremised exactly (see [`tilt`]); the macroscopic term of the free
//! energy needs only the eigenvalues of `X X^T`, computed once per dataset
//! (see [`spectrum`]).

pub mod solver;
pub mod spectrum;
pub mod tilt;

pub use solver::{
    fit, fit_calls_on_this_thread, fit_with, free_energy, gradient, hessian, EcProblem, EcState,
    Evaluation, FitResult, FitSettings, StepRecord,
};
pub use spectrum::Spectrum;
pub use tilt::{solve_tilt, Tilt, TiltSettings};
