use nalgebra::DVector;
use oscidamp_core::controller::{
    decay_report, simulate, DecayReport, SimulationSettings, StopRule, Termination, Trajectory,
};
use oscidamp_core::geometry::GaugeNorm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{check_quadrature_nodes, gauge_for, positive, positive_count, Experiment, ExperimentConfig};
use crate::{FailureKind, RunContext, RunError, RunManifest};

/// Largest per-step gauge increase tolerated before a run counts as non-monotone.
pub const MONOTONE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayParams {
    /// Starting level `M`.
    pub initial_gauge: f64,
    /// Target level `N < M`.
    pub target_gauge: f64,
    pub runs: usize,
    /// Time limit per run.
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub quadrature_nodes: usize,
    /// Near-origin cutoff; defaults to `10 · max(1, ω_max)`.
    pub cutoff: Option<f64>,
    /// Write one CSV per run.
    pub trajectories: bool,
}

impl Default for DecayParams {
    fn default() -> Self {
        Self {
            initial_gauge: 50.0,
            target_gauge: 10.0,
            runs: 20,
            horizon: 400.0,
            step: 1e-2,
            seed: 0,
            quadrature_nodes: 16,
            cutoff: None,
            trajectories: true,
        }
    }
}

impl DecayParams {
    fn validate(&self) -> Result<(), RunError> {
        positive("initial_gauge", self.initial_gauge)?;
        positive("target_gauge", self.target_gauge)?;
        positive("horizon", self.horizon)?;
        positive("step", self.step)?;
        positive_count("runs", self.runs)?;
        check_quadrature_nodes(self.quadrature_nodes)?;
        if let Some(c) = self.cutoff {
            if !(c.is_finite() && c >= 0.0) {
                return Err(RunError::Config(format!("cutoff must be finite and non-negative, got {c}")));
            }
        }
        if self.initial_gauge == self.target_gauge {
            return Err(RunError::Config("degenerate level pair: initial_gauge equals target_gauge".into()));
        }
        if self.initial_gauge < self.target_gauge {
            return Err(RunError::Config("initial_gauge must exceed target_gauge".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub index: usize,
    pub trajectory: Option<String>,
    pub termination: Termination,
    pub switches: usize,
    pub max_gauge_increase: f64,
    /// `T / (M − N)`.
    pub ratio: f64,
    pub report: DecayReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecaySummary {
    pub frequencies: Vec<f64>,
    pub initial_gauge: f64,
    pub target_gauge: f64,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub runs: Vec<RunSummary>,
    /// Empirical max of `T / (M − N)` over all runs.
    pub max_ratio: f64,
    pub min_mean_speed: f64,
    pub all_reached_target: bool,
    pub all_monotone: bool,
}

pub const SUMMARY_FILE: &str = "decay_summary.json";

/// Random direction from stream `index` of `seed`, scaled onto `ρ = level`.
pub fn initial_state(gauge: &GaugeNorm, level: f64, seed: u64, index: u64) -> Result<DVector<f64>, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let d = DVector::from_fn(gauge.system().dim(), |_, _| rng.random_range(-1.0..1.0));
    let rho = gauge.gauge(&d).map_err(RunError::numerical)?;
    Ok(d * (level / rho))
}

fn max_increase(traj: &Trajectory) -> f64 {
    traj.gauges.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

pub fn run_decay_experiment(config: &ExperimentConfig) -> Result<RunManifest, RunError> {
    config.require(Experiment::Decay)?;
    let params: DecayParams = config.parameters()?;
    params.validate()?;
    let system = config.build_system()?;
    let gauge = gauge_for(&system, params.quadrature_nodes);
    let mut ctx = RunContext::start(config)?;

    let settings = SimulationSettings {
        step: params.step,
        cutoff: params.cutoff,
        ..SimulationSettings::default()
    };
    let stop = StopRule::TargetGauge {
        target: params.target_gauge,
        max_time: params.horizon,
    };
    let trajectories: Vec<Trajectory> = (0..params.runs)
        .into_par_iter()
        .map(|k| {
            let x0 = initial_state(&gauge, params.initial_gauge, params.seed, k as u64)?;
            simulate(&gauge, &x0, stop, settings).map_err(|e| RunError::Numerical(format!("run {k}: {e}")))
        })
        .collect::<Result<_, _>>()?;

    let drop = params.initial_gauge - params.target_gauge;
    let mut runs = Vec::with_capacity(params.runs);
    for (k, traj) in trajectories.iter().enumerate() {
        let report = decay_report(traj).map_err(RunError::numerical)?;
        let trajectory = if params.trajectories {
            let name = format!("trajectory_{k:03}.csv");
            ctx.write_with(&name, |out| traj.write_csv(out))?;
            Some(name)
        } else {
            None
        };
        let summary = RunSummary {
            index: k,
            trajectory,
            termination: traj.termination,
            switches: traj.switch_times.len(),
            max_gauge_increase: max_increase(traj),
            ratio: report.elapsed / drop,
            report,
        };
        if summary.termination != Termination::TargetReached {
            ctx.fail(
                FailureKind::Invariant,
                format!("run {k} stopped ({:?}) at gauge {} before reaching {}", traj.termination, report.rho_end, params.target_gauge),
            );
        }
        if summary.max_gauge_increase > MONOTONE_TOLERANCE {
            ctx.fail(
                FailureKind::Invariant,
                format!("run {k}: gauge increased by {:e} in one step", summary.max_gauge_increase),
            );
        }
        if report.mean_speed <= 0.0 {
            ctx.fail(FailureKind::Invariant, format!("run {k}: no decay"));
        }
        runs.push(summary);
    }

    let summary = DecaySummary {
        frequencies: system.frequencies().to_vec(),
        initial_gauge: params.initial_gauge,
        target_gauge: params.target_gauge,
        horizon: params.horizon,
        step: params.step,
        seed: params.seed,
        max_ratio: runs.iter().map(|r| r.ratio).fold(0.0, f64::max),
        min_mean_speed: runs.iter().map(|r| r.report.mean_speed).fold(f64::INFINITY, f64::min),
        all_reached_target: runs.iter().all(|r| r.termination == Termination::TargetReached),
        all_monotone: runs.iter().all(|r| r.max_gauge_increase <= MONOTONE_TOLERANCE),
        runs,
    };
    ctx.write_json(SUMMARY_FILE, &summary)?;
    ctx.finish(config)
}
