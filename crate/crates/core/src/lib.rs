//! Continuous-time higher-order Markov processes.
//!
//! A process of order `tau` evolves as
//! `dy(t) = drift(H_t) dt + diffusion(H_t) dW(t)`, where the state `H_t` is
//! the trajectory over the trailing window `[t - tau, t]`. This crate
//! provides:
//!
//! - [`history`]: history segments, quadrature and rolling updates;
//! - [`models`]: drift/diffusion functionals and the built-in families;
//! - [`simulate`]: Euler–Maruyama paths and ensembles with keyed randomness;
//! - [`inference`]: jump moments, transition densities, Chapman–Kolmogorov checks;
//! - [`estimate`]: maximum-likelihood fitting from irregular observations.

pub mod error;
pub mod estimate;
pub mod history;
pub mod inference;
pub mod io;
pub mod models;
pub mod optim;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use estimate::{
    fit_mle, interpolate_dataset, log_likelihood, partition_blocks, Blocks, Dataset, FitOptions,
    FitResult, ModelFamily, Optimizer, RegularSeries,
};
pub use history::{gateaux_derivative, HistorySegment, TimeGrid, Window};
pub use inference::{
    ck_consistency_check, estimate_jump_moment, transition_logdensity, CKReport, JumpMomentEstimate,
};
pub use models::{
    eval_functional, make_ewma_vol, make_ho_gbm, make_ho_ou, FunctionalExpr, HistorySource,
    ModelSpec, Parameter, Params, Scalar, WeightFunction,
};
pub use simulate::{
    simulate_ensemble, simulate_path, InitialCondition, Path, SimConfig,
};
