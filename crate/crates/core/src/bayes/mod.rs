//! Posterior sampling of wrinkle parameters.
//!
//! The prior is an independent Gaussian built from least-squares fits to
//! each observed wrinkle. The likelihood compares predicted misalignment
//! with the closest observation only, so the posterior has one mode per
//! observed wrinkle. Chains use preconditioned Crank-Nicolson proposals in
//! coordinates whitened by the prior.

mod diagnostics;
mod fit;
mod likelihood;
mod mcmc;
mod prior;

pub use diagnostics::{chain_convergence, combined_iact, iact, ConvergenceReport, CONVERGENCE_THRESHOLD};
pub use fit::{fit_map_observation, FitConfig, MapFit};
pub use likelihood::{
    data_misfit, forward_model, log_posterior, misfit, misfit_from_predictions, MisfitNorm, NoiseModel,
    ObservationSet, Target, WrinklePosterior, BASE_ACCURACY,
};
pub use mcmc::{
    chain_rng, initial_state, log_acceptance, mh_step, pcn_propose, run_chain, sample_posterior, tune_beta, Chain,
    ChainConfig, ChainState, PosteriorRun, RunDiagnostics, SamplerPlan, TuneConfig, TuneReport,
};
pub use prior::{build_prior, student_t_factor, PriorModel, VARIANCE_FLOOR};
