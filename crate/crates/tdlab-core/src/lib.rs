//! Policy-evaluation laboratory for temporal-difference methods with linear
//! function approximation.
//!
//! The crate provides, in dependency order:
//!
//! - [`mdp`]: tabular MDPs, policies, induced Markov reward processes, and
//!   stationary-distribution / value-function solvers;
//! - [`features`] and [`geometry`]: linear feature maps and the stationary
//!   feature covariance with its norms and conditioning;
//! - [`population`]: exact population systems for the on-policy fixed point
//!   and the off-policy projected objective (gradient, auxiliary vector,
//!   two-timescale dynamics matrix, contraction certificate);
//! - [`sampler`]: seeded i.i.d. sample streams addressed by
//!   `(seed, trial, step)` and per-sample rank-one statistics;
//! - [`learner`]: TD with iterate averaging, the two-timescale corrected
//!   learner, divergence detection, and stepsize planning from instance
//!   constants;
//! - [`instances`]: the hard-family chain with closed-form ground truth, the
//!   seven-state divergence counterexample, and a JSON carrier for external
//!   instances;
//! - [`synth`]: seeded random instances for testing and benchmarking;
//! - [`config`] and [`experiment`]: the flat key-value run configuration and
//!   the parallel multi-trial runner with CSV emission and rate fitting.

pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod geometry;
pub mod instances;
pub mod learner;
pub mod mdp;
pub mod population;
pub mod sampler;
pub mod synth;

pub use config::{
    parse_config, preset, preset_names, render_config, AlgorithmKind, CheckpointSpec,
    ExperimentConfig, InstanceConfig, Theta0Spec,
};
pub use error::{Error, Result};
pub use experiment::{
    emit, fit_rate, read_summary, resolve_checkpoints, run_experiment, RateFit, RunOutput,
    SummaryRow, TrialTrace,
};
pub use features::FeatureMap;
pub use geometry::{build_geometry, weighted_feature_covariance, StationaryGeometry};
pub use instances::{
    build_baird, build_minimax, BairdInstance, ExternalInstanceFile, MinimaxInstance, MinimaxSpec,
    Sign,
};
pub use learner::{
    is_divergent, plan_stepsizes, PlanContext, PlannedStepsizes, StepsizeOutcome, StepsizePlan,
    TdState, TdcState, DIVERGENCE_NORM,
};
pub use mdp::{stationary_distribution, InducedMrp, Policy, TabularMdp};
pub use population::{
    auxiliary_w, mspbe, mspbe_from_definition, mspbe_gradient, off_policy_population,
    on_policy_population, projected_bellman_residual, psi_contraction_certificate, psi_matrix,
    spectral_norm, ContractionReport, OffPolicyFixedPoint, OffPolicyPopulation,
    OnPolicyPopulation, TdcConstants,
};
pub use sampler::{empirical_terms, EmpiricalTerms, SampleStream, SampleTuple, TermsMode};
pub use synth::{random_instance, rng_for, RandomInstance};
