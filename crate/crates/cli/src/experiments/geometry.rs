use std::f64::consts::{FRAC_2_PI, FRAC_PI_2};

use nalgebra::DVector;
use oscidamp_core::geometry::{GaugeNorm, GeometryError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{check_quadrature_nodes, gauge_for, positive, positive_count, Experiment, ExperimentConfig};
use crate::{FailureKind, RunContext, RunError, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryParams {
    pub seed: u64,
    /// Random points per check.
    pub samples: usize,
    pub quadrature_nodes: usize,
    /// Covectors compared against a long-time average.
    pub time_average_samples: usize,
    pub time_average_horizon: f64,
    pub time_average_step: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 100,
            quadrature_nodes: 16,
            time_average_samples: 20,
            time_average_horizon: 1e4,
            time_average_step: 1e-2,
        }
    }
}

impl GeometryParams {
    fn validate(&self) -> Result<(), RunError> {
        positive_count("samples", self.samples)?;
        positive_count("time_average_samples", self.time_average_samples)?;
        positive("time_average_horizon", self.time_average_horizon)?;
        positive("time_average_step", self.time_average_step)?;
        check_quadrature_nodes(self.quadrature_nodes)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub samples: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometryReport {
    pub frequencies: Vec<f64>,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub const REPORT_FILE: &str = "geometry_report.json";

/// Independent sample stream per check.
struct Sampler {
    seed: u64,
    dim: usize,
}

impl Sampler {
    fn rng(&self, check: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(check);
        rng
    }

    fn vector(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        loop {
            let v = DVector::from_fn(self.dim, |_, _| rng.random_range(-3.0..3.0));
            if v.norm_squared() > 1e-2 {
                return v;
            }
        }
    }

    fn vectors(&self, check: u64, count: usize, per_sample: usize) -> Vec<Vec<DVector<f64>>> {
        let mut rng = self.rng(check);
        (0..count)
            .map(|_| (0..per_sample).map(|_| self.vector(&mut rng)).collect())
            .collect()
    }
}

/// Largest residual over the samples; the maximum does not depend on the
/// order in which parallel workers finish.
fn max_residual<T: Sync>(
    items: &[T],
    f: impl Fn(&T) -> Result<f64, GeometryError> + Sync,
) -> Result<f64, GeometryError> {
    items
        .par_iter()
        .map(&f)
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

fn check(name: &'static str, samples: usize, max_residual: f64, tolerance: f64) -> Check {
    Check {
        name,
        samples,
        max_residual,
        tolerance,
        passed: max_residual <= tolerance,
    }
}

fn central_difference(f: impl Fn(&DVector<f64>) -> Result<f64, GeometryError>, at: &DVector<f64>, h: f64) -> Result<DVector<f64>, GeometryError> {
    let mut out = DVector::zeros(at.len());
    for k in 0..at.len() {
        let mut e = DVector::zeros(at.len());
        e[k] = h;
        out[k] = (f(&(at + &e))? - f(&(at - &e))?) / (2.0 * h);
    }
    Ok(out)
}

fn battery(g: &GaugeNorm, params: &GeometryParams) -> Result<Vec<Check>, GeometryError> {
    let system = g.system();
    let sf = g.support();
    let n = params.samples;
    let s = Sampler { seed: params.seed, dim: system.dim() };
    let mut checks = Vec::new();

    let mut rng = s.rng(0);
    let scaled: Vec<(DVector<f64>, f64)> = (0..n)
        .map(|_| (s.vector(&mut rng), 10f64.powf(rng.random_range(-2.0..2.0))))
        .collect();
    let r = max_residual(&scaled, |(p, lambda)| {
        let h = sf.support(p)?;
        Ok((sf.support(&(p * *lambda))? - lambda * h).abs() / (lambda * h))
    })?;
    checks.push(check("support_homogeneity", n, r, 1e-10));

    let pairs = s.vectors(1, n, 2);
    let r = max_residual(&pairs, |v| {
        let avg = 0.5 * (sf.support(&v[0])? + sf.support(&v[1])?);
        Ok(((sf.support(&((&v[0] + &v[1]) * 0.5))? - avg) / avg).max(0.0))
    })?;
    checks.push(check("support_convexity", n, r, 1e-12));

    let ps = s.vectors(2, n, 1);
    let r = max_residual(&ps, |v| {
        let p = &v[0];
        let grad = sf.support_gradient(p)?.gradient;
        let fd = central_difference(|q| sf.support(q), p, 1e-6 * p.norm())?;
        Ok((fd - &grad).norm() / grad.norm())
    })?;
    checks.push(check("support_gradient", n, r, 1e-5));

    let xs = s.vectors(3, n, 1);
    let r = max_residual(&xs, |v| Ok((sf.support(&g.gauge_gradient(&v[0])?)? - 1.0).abs()))?;
    checks.push(check("eikonal", n, r, 1e-6));

    let xs = s.vectors(4, n, 1);
    let r = max_residual(&xs, |v| {
        let p = g.gauge_gradient(&v[0])?;
        let fd = central_difference(|x| g.gauge(x), &v[0], 1e-6 * v[0].norm())?;
        Ok((fd - &p).norm() / p.norm())
    })?;
    checks.push(check("gauge_gradient", n, r, 1e-5));

    let mut rng = s.rng(5);
    let moved: Vec<(DVector<f64>, f64)> = (0..n).map(|_| (s.vector(&mut rng), rng.random_range(0.0..10.0))).collect();
    let r = max_residual(&moved, |(x, t)| {
        let rho = g.gauge(x)?;
        Ok((g.gauge(&system.free_motion(x, *t))? - rho).abs() / rho)
    })?;
    checks.push(check("flow_invariance", n, r, 1e-8));

    let xv = s.vectors(6, n, 2);
    let r = max_residual(&xv, |v| Ok(v[0].dot(&g.gauge_hessian_apply(&v[0], &v[1])?).abs() / v[1].norm()))?;
    checks.push(check("hessian_annihilates_state", n, r, 1e-6));

    let xv = s.vectors(7, n, 2);
    let r = max_residual(&xv, |v| {
        let expected = g.gauge_hessian_apply(&v[0], &v[1])? / 10.0;
        let far = g.gauge_hessian_apply(&(&v[0] * 10.0), &v[1])?;
        Ok((far - &expected).norm() / expected.norm().max(1e-9 * v[1].norm()))
    })?;
    checks.push(check("hessian_inverse_scaling", n, r, 1e-2));

    let m = params.time_average_samples;
    let mut rng = s.rng(8);
    let ps: Vec<DVector<f64>> = (0..m)
        .map(|_| DVector::from_fn(system.dim(), |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let r = max_residual(&ps, |p| {
        let avg = sf.time_average(p, params.time_average_horizon, params.time_average_step);
        Ok((sf.support(p)? - avg).abs())
    })?;
    checks.push(check("torus_vs_time_average", m, r, 1e-3));

    if let [omega] = system.frequencies() {
        let omega = *omega;
        let pairs = s.vectors(9, n, 2);
        let r = max_residual(&pairs, |v| {
            let (p, x) = (&v[0], &v[1]);
            let h = FRAC_2_PI * (p[0] / omega).hypot(p[1]);
            let rho = FRAC_PI_2 * (omega * x[0]).hypot(x[1]);
            Ok(((sf.support(p)? - h).abs() / h).max((g.gauge(x)? - rho).abs() / rho))
        })?;
        checks.push(check("ellipse_oracle", n, r, 1e-6));
    }
    Ok(checks)
}

pub fn run_geometry_suite(config: &ExperimentConfig) -> Result<RunManifest, RunError> {
    config.require(Experiment::Geometry)?;
    let params: GeometryParams = config.parameters()?;
    params.validate()?;
    let system = config.build_system()?;
    let gauge = gauge_for(&system, params.quadrature_nodes);
    let checks = battery(&gauge, &params).map_err(RunError::numerical)?;

    let mut ctx = RunContext::start(config)?;
    for c in checks.iter().filter(|c| !c.passed) {
        ctx.fail(
            FailureKind::Invariant,
            format!("{}: residual {:e} above {:e}", c.name, c.max_residual, c.tolerance),
        );
    }
    let report = GeometryReport {
        frequencies: system.frequencies().to_vec(),
        seed: params.seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    ctx.write_json(REPORT_FILE, &report)?;
    ctx.finish(config)
}
