//! Ancestral state reconstruction on star trees under the proportional
//! (F81-type) substitution model.
//!
//! Estimators: exhaustive profile-likelihood MLE, empirical Bayes, the
//! difference estimator and majority rule. The [`asymptotics`] module
//! computes the limiting criterion `e(rho)`, the single- and two-site
//! inconsistency conditions and the zone scan.

pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod io;
pub mod manifest;
pub mod model;
pub mod simulate;

pub use error::{Error, Result};
pub use estimators::{estimate, EstimateResult, Method, DEFAULT_SEARCH_CAP};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutcome, ExperimentRow};
pub use manifest::Manifest;
pub use model::{
    mu, s_from_t, t_from_s, transition_prob, Alignment, AncestralSequence, EdgeSpec, State,
    StationaryDistribution,
};
pub use simulate::{simulate, EdgeLaw, EdgeSource, SimulationConfig};
