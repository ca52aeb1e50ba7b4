use oscidamp_core::adjoint_pair;
use oscidamp_core::observability::{estimate_apriori_constant, EstimateConfig, EstimateReport, ObservabilityError};
use serde::{Deserialize, Serialize};

use crate::config::{positive_count, Experiment, ExperimentConfig, PairOverride};
use crate::{RunContext, RunError, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateParams {
    pub samples: usize,
    pub seed: u64,
    /// The interval is `[start, start + length]`.
    pub start: f64,
    pub length: usize,
    pub samples_per_unit: usize,
    pub perturbation_mass: f64,
    pub degree: usize,
    /// Use this pair instead of the adjoint pair of the configured system.
    pub pair_override: Option<PairOverride>,
}

impl Default for EstimateParams {
    fn default() -> Self {
        let d = EstimateConfig::default();
        Self {
            samples: d.samples,
            seed: d.seed,
            start: d.start,
            length: d.length,
            samples_per_unit: d.samples_per_unit,
            perturbation_mass: d.perturbation_mass,
            degree: d.degree,
            pair_override: None,
        }
    }
}

impl EstimateParams {
    fn sampler(&self) -> Result<EstimateConfig, RunError> {
        positive_count("samples", self.samples)?;
        positive_count("length", self.length)?;
        positive_count("samples_per_unit", self.samples_per_unit)?;
        if !self.start.is_finite() {
            return Err(RunError::Config("start must be finite".into()));
        }
        if !(self.perturbation_mass.is_finite() && self.perturbation_mass >= 0.0) {
            return Err(RunError::Config("perturbation_mass must be finite and non-negative".into()));
        }
        Ok(EstimateConfig {
            samples: self.samples,
            seed: self.seed,
            start: self.start,
            length: self.length,
            samples_per_unit: self.samples_per_unit,
            perturbation_mass: self.perturbation_mass,
            degree: self.degree,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateArtifact {
    pub state_dim: usize,
    pub output_dim: usize,
    pub interval: [f64; 2],
    pub sampler: EstimateConfig,
    pub report: EstimateReport,
}

pub const REPORT_FILE: &str = "estimate_report.json";

pub fn run_estimate_experiment(config: &ExperimentConfig) -> Result<RunManifest, RunError> {
    config.require(Experiment::Estimate)?;
    let params: EstimateParams = config.parameters()?;
    let sampler = params.sampler()?;
    let pair = match &params.pair_override {
        Some(o) => o.build()?,
        None => adjoint_pair(&config.build_system()?),
    };
    let report = estimate_apriori_constant(&pair, &sampler).map_err(|e| match e {
        ObservabilityError::InvalidSetting(_) | ObservabilityError::GridTooCoarse { .. } | ObservabilityError::InvalidInterval(_) => {
            RunError::Config(e.to_string())
        }
        other => RunError::numerical(other),
    })?;
    let mut ctx = RunContext::start(config)?;
    let artifact = EstimateArtifact {
        state_dim: pair.state_dim(),
        output_dim: pair.output_dim(),
        interval: [sampler.start, sampler.start + sampler.length as f64],
        sampler,
        report,
    };
    ctx.write_json(REPORT_FILE, &artifact)?;
    ctx.finish(config)
}
