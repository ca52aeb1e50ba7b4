//! Experiment runner behind the `oscidamp` binary.
//!
//! Each experiment reads an [`ExperimentConfig`], writes its artifacts into
//! `output_dir`, and finishes by writing `manifest.json`. Checks that fail do
//! not abort a run: they are listed in the manifest and decide the exit code.

pub mod config;
pub mod error;
pub mod experiments;
pub mod json;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{Experiment, ExperimentConfig, PairOverride};
pub use error::RunError;
pub use experiments::{run_brunovsky_suite, run_decay_experiment, run_estimate_experiment, run_geometry_suite};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// A solver, quadrature or conditioning failure.
    Numerical,
    /// A verified property did not hold.
    Invariant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: Experiment,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// File names relative to `output_dir`, excluding the manifest itself.
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
    pub failures: Vec<Failure>,
}

impl RunManifest {
    /// 0 on success, 3 if any numerical failure, otherwise 4.
    pub fn exit_code(&self) -> i32 {
        self.outcome().err().map_or(0, |e| e.exit_code())
    }

    pub fn outcome(&self) -> Result<(), RunError> {
        if let Some(f) = self.failures.iter().find(|f| f.kind == FailureKind::Numerical) {
            return Err(RunError::Numerical(f.message.clone()));
        }
        if self.failures.is_empty() {
            Ok(())
        } else {
            Err(RunError::SuiteFailed(self.failures.iter().map(|f| f.message.clone()).collect()))
        }
    }
}

/// Collects artifacts and failures while an experiment runs.
pub(crate) struct RunContext {
    dir: PathBuf,
    started: Instant,
    artifacts: Vec<String>,
    failures: Vec<Failure>,
}

impl RunContext {
    pub(crate) fn start(config: &ExperimentConfig) -> Result<Self, RunError> {
        let dir = config.output_dir.clone();
        fs::create_dir_all(&dir).map_err(|source| RunError::Io { path: dir.clone(), source })?;
        Ok(Self {
            dir,
            started: Instant::now(),
            artifacts: Vec::new(),
            failures: Vec::new(),
        })
    }

    pub(crate) fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub(crate) fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        json::write(&self.path(name), value)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub(crate) fn write_with(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn std::io::Write) -> std::io::Result<()>,
    ) -> Result<(), RunError> {
        let path = self.path(name);
        let io_err = |source| RunError::Io { path: path.clone(), source };
        let file = fs::File::create(&path).map_err(io_err)?;
        let mut out = std::io::BufWriter::new(file);
        body(&mut out).map_err(io_err)?;
        std::io::Write::flush(&mut out).map_err(io_err)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub(crate) fn fail(&mut self, kind: FailureKind, message: impl Into<String>) {
        self.failures.push(Failure { kind, message: message.into() });
    }

    pub(crate) fn finish(self, config: &ExperimentConfig) -> Result<RunManifest, RunError> {
        let manifest = RunManifest {
            tool: "oscidamp",
            version: env!("CARGO_PKG_VERSION"),
            experiment: config.experiment,
            seed: config.seed(),
            config: config.clone(),
            artifacts: self.artifacts,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            failures: self.failures,
        };
        json::write(&self.dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

/// Dispatches on `config.experiment`.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest, RunError> {
    match config.experiment {
        Experiment::Decay => run_decay_experiment(config),
        Experiment::Estimate => run_estimate_experiment(config),
        Experiment::Geometry => run_geometry_suite(config),
        Experiment::Brunovsky => run_brunovsky_suite(config),
    }
}

/// Loads a config, applies command-line overrides and runs it.
pub fn run_from_path(
    experiment: Experiment,
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<RunManifest, RunError> {
    let mut config = ExperimentConfig::load(path)?;
    config.require(experiment)?;
    if let Some(seed) = seed {
        config.set_seed(seed);
    }
    if let Some(out) = out {
        config.output_dir = out;
    }
    run(&config)
}
