//! Observed linear systems `ż = 𝒜z + f`, `y = 𝒞z`: reduction to integrator
//! chains, the map `z ↦ (𝒞z, ż − 𝒜z)` on sampled data, the differential
//! relation between a chain's observation and its perturbation, an L¹
//! interpolation inequality, and randomized estimation of the a priori
//! constant in `∫|z| ≤ c(∫|𝒞z| + ∫|f|)`.

mod brunovsky;
mod estimate;
mod signal;

use thiserror::Error;

use crate::model::ModelError;

pub use brunovsky::{
    brunovsky_reduce, chain_form, BrunovskyForm, CERTIFICATE_TOLERANCE, MAX_CONDITION,
};
pub use estimate::{
    estimate_apriori_constant, perturbation_ratio, EstimateConfig, EstimateReport, Perturbation,
    WorstCase,
};
pub use signal::{
    kolmogorov_ratio, observation_relation_residual, phi_map, reconstruct_state,
    KolmogorovRatio, SampledSignal, MIN_SAMPLES_PER_UNIT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservabilityError {
    #[error("the pair is not observable")]
    NotObservable,
    #[error("ill-conditioned state change: {0}")]
    IllConditionedTransform(String),
    #[error("output {output} is coupled to the others in a way output injection cannot remove")]
    CouplingNotRemovable { output: usize },
    #[error("grid too coarse: {samples_per_unit} samples per unit, need {required}")]
    GridTooCoarse {
        samples_per_unit: usize,
        required: usize,
    },
    #[error("invalid interval: {0}")]
    InvalidInterval(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
