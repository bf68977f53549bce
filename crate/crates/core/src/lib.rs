//! Parametric Bayesian learning games.
//!
//! Players observe data whose law depends on a shared parameter θ*. A
//! coalition's value is the KL divergence of its joint posterior from the
//! common prior; players are credited with Shapley or Banzhaf values of that
//! game. As data grows, pairwise value differences approach those of the
//! limiting game `S ↦ ½ ln|I_S|`, which depends only on Fisher information.
//! [`fairshare`] uses this to set per-player data collection rates so that
//! Shapley values converge.

// Negated comparisons below deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fairshare;
pub mod features;
pub mod fisher;
pub mod game;
pub mod gauss;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod sources;

pub use error::{Error, Result};
pub use fairshare::{
    delta_stat, iter_metric, pairs, rate_step, run, run_stats, run_with_estimator, DeltaStats, FairShareConfig,
    FisherMode, ParameterEstimator, PosteriorMean, RateLimits, RunRecord,
};
pub use features::{impute_mean, ls_bundle, noisy_observer_from_table, Bundle, BundleSource, FeatureTable, Sampling};
pub use fisher::{gen_fisher_ratio, joint_fisher, log_det_fisher, sample_fisher, FisherMatrix, Provenance};
pub use game::{
    banzhaf, delta_pair, limiting_game, shapley_exact, shapley_mc, Attribution, CharacteristicFunction, Coalition,
    Method, SolutionConcept, WeightTable,
};
pub use gauss::{entropy, extended_kl_gauss_box, kl_gauss, tv_estimate_mc, BoxUniform, Gaussian, McEstimate};
pub use inference::{
    build_game, bvm_approx, characteristic_value, conjugate_posterior, joint_mle, normal_prior_asymptote,
    uniform_prior_asymptote, xi, PlayerData, PosteriorSummary, Prior, ValueOptions,
};
pub use linalg::log_det;
pub use models::{
    analytic_fisher, estimate_noise_sd, log_likelihood, sample, score, DataPoint, DataSet, DesignLaw,
    DirectObservationModel, LinearGaussianModel, PlayerModel, TrueParameter,
};
pub use sources::{DataSource, MixtureLatentSource, SourceError, SyntheticSource};
