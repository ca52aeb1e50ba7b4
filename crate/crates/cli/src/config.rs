//! Experiment configuration: one JSON document, unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nalgebra::DMatrix;
use oscidamp_core::geometry::{GaugeNorm, QuadratureSpec, SolverSettings, SupportFunction};
use oscidamp_core::model::SystemSpec;
use oscidamp_core::{ObservablePair, OscillatorSystem};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Decay,
    Estimate,
    Geometry,
    Brunovsky,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Decay => "decay",
            Experiment::Estimate => "estimate",
            Experiment::Geometry => "geometry",
            Experiment::Brunovsky => "brunovsky",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub experiment: Experiment,
    /// Experiment-specific record, validated by [`ExperimentConfig::parameters`].
    #[serde(default = "empty_object")]
    pub parameters: serde_json::Value,
    pub output_dir: PathBuf,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let config: Self = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        if !config.parameters.is_object() {
            return Err(RunError::Config("parameters must be a JSON object".into()));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Typed view of `parameters` for one experiment.
    pub fn parameters<P: DeserializeOwned>(&self) -> Result<P, RunError> {
        serde_json::from_value(self.parameters.clone())
            .map_err(|e| RunError::Config(format!("{} parameters: {e}", self.experiment.name())))
    }

    pub fn set_seed(&mut self, seed: u64) {
        if let Some(map) = self.parameters.as_object_mut() {
            map.insert("seed".into(), seed.into());
        }
    }

    /// Seed recorded in `parameters`, zero when absent.
    pub fn seed(&self) -> u64 {
        self.parameters.get("seed").and_then(|v| v.as_u64()).unwrap_or(0)
    }

    pub fn build_system(&self) -> Result<OscillatorSystem, RunError> {
        self.system.build().map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn require(&self, experiment: Experiment) -> Result<(), RunError> {
        if self.experiment != experiment {
            return Err(RunError::Config(format!(
                "config is for the {} experiment, not {}",
                self.experiment.name(),
                experiment.name()
            )));
        }
        Ok(())
    }
}

/// Replaces the oscillator adjoint pair in the estimate and Brunovsky runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairOverride {
    /// Row-major state matrix.
    pub a: Vec<Vec<f64>>,
    /// Row-major output matrix.
    pub c: Vec<Vec<f64>>,
}

impl PairOverride {
    pub fn build(&self) -> Result<ObservablePair, RunError> {
        let a = rows_to_matrix(&self.a, "a")?;
        let c = rows_to_matrix(&self.c, "c")?;
        ObservablePair::new(a, c).map_err(|e| RunError::Config(e.to_string()))
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>, RunError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(RunError::Config(format!("pair_override.{name} must be a non-empty rectangular matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(RunError::Config(format!("pair_override.{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub(crate) fn gauge_for(system: &OscillatorSystem, quadrature_nodes: usize) -> GaugeNorm {
    let spec = QuadratureSpec {
        nodes: quadrature_nodes,
        ..QuadratureSpec::default()
    };
    GaugeNorm::new(SupportFunction::new(system, spec), SolverSettings::default())
}

pub(crate) fn check_quadrature_nodes(nodes: usize) -> Result<(), RunError> {
    let max = QuadratureSpec::default().max_nodes;
    if nodes == 0 || nodes > max {
        return Err(RunError::Config(format!("quadrature_nodes must lie in 1..={max}, got {nodes}")));
    }
    Ok(())
}

pub(crate) fn positive(name: &str, value: f64) -> Result<(), RunError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(RunError::Config(format!("{name} must be positive and finite, got {value}")))
    }
}

pub(crate) fn positive_count(name: &str, value: usize) -> Result<(), RunError> {
    if value > 0 {
        Ok(())
    } else {
        Err(RunError::Config(format!("{name} must be positive")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"system": {"frequencies": [1.0]}, "experiment": "decay", "output_dir": "out"}"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(c.experiment, Experiment::Decay);
        assert_eq!(c.seed(), 0);
        assert!(c.parameters.as_object().unwrap().is_empty());
    }

    #[test]
    fn rejects_unknown_keys_and_experiments() {
        let typo = BASE.replace("output_dir", "outputdir");
        assert!(matches!(ExperimentConfig::from_json(&typo), Err(RunError::Config(_))));
        let bad = BASE.replace("\"decay\"", "\"fly\"");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(RunError::Config(_))));
        let nested = BASE.replace("[1.0]", "[1.0], \"omega\": 2");
        assert!(matches!(ExperimentConfig::from_json(&nested), Err(RunError::Config(_))));
    }

    #[test]
    fn seed_override_lands_in_parameters() {
        let mut c = ExperimentConfig::from_json(BASE).unwrap();
        c.set_seed(17);
        assert_eq!(c.seed(), 17);
    }

    #[test]
    fn empty_frequency_list_is_a_config_error() {
        let c = ExperimentConfig::from_json(&BASE.replace("[1.0]", "[]")).unwrap();
        assert!(matches!(c.build_system(), Err(RunError::Config(_))));
    }

    #[test]
    fn ragged_override_rejected() {
        let o = PairOverride { a: vec![vec![0.0, 1.0], vec![0.0]], c: vec![vec![1.0, 0.0]] };
        assert!(matches!(o.build(), Err(RunError::Config(_))));
    }
}
