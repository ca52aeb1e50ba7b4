use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use oscidamp_core::adjoint_pair;
use oscidamp_core::observability::{
    brunovsky_reduce, kolmogorov_ratio, observation_relation_residual, ObservabilityError, SampledSignal,
    CERTIFICATE_TOLERANCE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{positive_count, Experiment, ExperimentConfig, PairOverride};
use crate::{FailureKind, RunContext, RunError, RunManifest};

pub const RELATION_TOLERANCE: f64 = 1e-4;
pub const SINE_TOLERANCE: f64 = 1e-3;
pub const FAMILY_BOUND: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrunovskyParams {
    pub seed: u64,
    /// Use this pair instead of the adjoint pair of the configured system.
    pub pair_override: Option<PairOverride>,
    /// Random smooth motions per chain length.
    pub relation_trials: usize,
    /// Chains of length `1..=relation_max_order` are checked.
    pub relation_max_order: usize,
    pub relation_samples_per_unit: usize,
    /// Random trigonometric signals in the interpolation battery.
    pub kolmogorov_family: usize,
    pub kolmogorov_samples_per_unit: usize,
}

impl Default for BrunovskyParams {
    fn default() -> Self {
        Self {
            seed: 0,
            pair_override: None,
            relation_trials: 20,
            relation_max_order: 3,
            relation_samples_per_unit: 256,
            kolmogorov_family: 500,
            kolmogorov_samples_per_unit: 1024,
        }
    }
}

impl BrunovskyParams {
    fn validate(&self) -> Result<(), RunError> {
        positive_count("relation_trials", self.relation_trials)?;
        positive_count("relation_max_order", self.relation_max_order)?;
        positive_count("relation_samples_per_unit", self.relation_samples_per_unit)?;
        positive_count("kolmogorov_family", self.kolmogorov_family)?;
        positive_count("kolmogorov_samples_per_unit", self.kolmogorov_samples_per_unit)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Reduction {
    pub passed: bool,
    pub error: Option<String>,
    pub blocks: Vec<usize>,
    pub certificate_error: Option<f64>,
    pub tolerance: f64,
    pub delta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub output_change: Vec<Vec<f64>>,
    pub a_can: Vec<Vec<f64>>,
    pub c_can: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelationBattery {
    pub orders: Vec<usize>,
    pub trials: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SineRatio {
    pub frequency: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KolmogorovBattery {
    pub sine: Vec<SineRatio>,
    pub sine_tolerance: f64,
    pub family_size: usize,
    /// `None` when some signal gave an unbounded ratio.
    pub family_max: Option<f64>,
    pub family_bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BrunovskyReport {
    pub state_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
    pub reduction: Reduction,
    pub relation: RelationBattery,
    pub kolmogorov: KolmogorovBattery,
    pub passed: bool,
}

pub const REPORT_FILE: &str = "brunovsky_report.json";

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Checks `y⁽ⁿ⁾ = Σ ∂ᵏ f_{n−k}` on chains driven along random one-periodic
/// motions `z_k = c_k + a_k cos 2πt + b_k sin 2πt`, whose perturbation
/// `f = ż − 𝒜z` is known in closed form.
fn relation_battery(params: &BrunovskyParams) -> Result<RelationBattery, ObservabilityError> {
    let orders: Vec<usize> = (1..=params.relation_max_order).collect();
    let spu = params.relation_samples_per_unit;
    let jobs: Vec<(usize, usize)> = orders
        .iter()
        .flat_map(|&n| (0..params.relation_trials).map(move |t| (n, t)))
        .collect();
    let max_residual = jobs
        .par_iter()
        .map(|&(n, trial)| {
            let mut rng = seeded(params.seed, (n * params.relation_trials + trial) as u64);
            let coef: Vec<[f64; 3]> = (0..n)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let z = |k: usize, t: f64| coef[k][0] + coef[k][1] * (TAU * t).cos() + coef[k][2] * (TAU * t).sin();
            let dz = |k: usize, t: f64| TAU * (coef[k][2] * (TAU * t).cos() - coef[k][1] * (TAU * t).sin());
            let y = SampledSignal::scalar(0.0, 1, spu, |t| z(0, t))?;
            let f = SampledSignal::from_fn(0.0, 1, spu, n, |t| {
                DVector::from_fn(n, |k, _| dz(k, t) - if k + 1 < n { z(k + 1, t) } else { 0.0 })
            })?;
            observation_relation_residual(n, &y, &f)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
    Ok(RelationBattery {
        orders,
        trials: params.relation_trials,
        max_residual,
        tolerance: RELATION_TOLERANCE,
        passed: max_residual <= RELATION_TOLERANCE,
    })
}

fn kolmogorov_battery(params: &BrunovskyParams) -> Result<KolmogorovBattery, ObservabilityError> {
    let spu = params.kolmogorov_samples_per_unit;
    let sine = [1.0, 2.0, 4.0]
        .iter()
        .map(|&k| {
            let y = SampledSignal::scalar(0.0, 1, spu, |t| (TAU * k * t).sin())?;
            Ok(SineRatio { frequency: k, ratio: kolmogorov_ratio(&y, 2)?.value() })
        })
        .collect::<Result<Vec<_>, ObservabilityError>>()?;
    // Streams after the relation battery's keep the two families independent.
    let offset = ((params.relation_max_order + 1) * params.relation_trials) as u64;
    let family_max = (0..params.kolmogorov_family)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(params.seed, offset + i as u64);
            let degree = rng.random_range(1..=8usize);
            let coef: Vec<(f64, f64)> = (0..degree)
                .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let y = SampledSignal::scalar(0.0, 1, spu, |t| {
                coef.iter()
                    .enumerate()
                    .map(|(j, (a, b))| {
                        let w = TAU * (j + 1) as f64;
                        a * (w * t).cos() + b * (w * t).sin()
                    })
                    .sum()
            })?;
            Ok::<f64, ObservabilityError>(kolmogorov_ratio(&y, 2 + i % 2)?.value())
        })
        .try_reduce(|| 0.0, |a: f64, b: f64| Ok(a.max(b)))?;
    let sine_ok = sine.iter().all(|s| (s.ratio - 1.0).abs() <= SINE_TOLERANCE);
    Ok(KolmogorovBattery {
        sine,
        sine_tolerance: SINE_TOLERANCE,
        family_size: params.kolmogorov_family,
        family_max: family_max.is_finite().then_some(family_max),
        family_bound: FAMILY_BOUND,
        passed: sine_ok && family_max <= FAMILY_BOUND,
    })
}

pub fn run_brunovsky_suite(config: &ExperimentConfig) -> Result<RunManifest, RunError> {
    config.require(Experiment::Brunovsky)?;
    let params: BrunovskyParams = config.parameters()?;
    params.validate()?;
    let pair = match &params.pair_override {
        Some(o) => o.build()?,
        None => adjoint_pair(&config.build_system()?),
    };
    let mut ctx = RunContext::start(config)?;

    let reduction = match brunovsky_reduce(&pair) {
        Ok(form) => {
            let err = form.certificate_error();
            if err > CERTIFICATE_TOLERANCE {
                ctx.fail(FailureKind::Invariant, format!("certificate error {err:e} above {CERTIFICATE_TOLERANCE:e}"));
            }
            Reduction {
                passed: err <= CERTIFICATE_TOLERANCE,
                error: None,
                blocks: form.blocks.clone(),
                certificate_error: Some(err),
                tolerance: CERTIFICATE_TOLERANCE,
                delta: rows(&form.delta),
                gamma: rows(&form.gamma),
                output_change: rows(&form.output_change),
                a_can: rows(&form.a_can),
                c_can: rows(&form.c_can),
            }
        }
        Err(e) => {
            let kind = match e {
                ObservabilityError::NotObservable => FailureKind::Invariant,
                _ => FailureKind::Numerical,
            };
            ctx.fail(kind, format!("reduction: {e}"));
            Reduction {
                passed: false,
                error: Some(e.to_string()),
                blocks: Vec::new(),
                certificate_error: None,
                tolerance: CERTIFICATE_TOLERANCE,
                delta: Vec::new(),
                gamma: Vec::new(),
                output_change: Vec::new(),
                a_can: Vec::new(),
                c_can: Vec::new(),
            }
        }
    };

    let relation = relation_battery(&params).map_err(RunError::numerical)?;
    if !relation.passed {
        ctx.fail(
            FailureKind::Invariant,
            format!("observation relation residual {:e} above {RELATION_TOLERANCE:e}", relation.max_residual),
        );
    }
    let kolmogorov = kolmogorov_battery(&params).map_err(RunError::numerical)?;
    if !kolmogorov.passed {
        ctx.fail(FailureKind::Invariant, "interpolation inequality battery failed");
    }

    let report = BrunovskyReport {
        state_dim: pair.state_dim(),
        output_dim: pair.output_dim(),
        seed: params.seed,
        passed: reduction.passed && relation.passed && kolmogorov.passed,
        reduction,
        relation,
        kolmogorov,
    };
    ctx.write_json(REPORT_FILE, &report)?;
    ctx.finish(config)
}
