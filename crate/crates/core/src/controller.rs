//! The feedback `u(x) = −sign⟨B, p(x)⟩`, closed-loop simulation with located
//! switches, and the diagnostics built on the resulting trajectories.

use std::io::{self, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GaugeNorm, GeometryError, Momentum};
use crate::model::OscillatorSystem;

/// `|⟨B, p⟩|` below this gives `u = 0`.
pub const DEAD_ZONE: f64 = 1e-9;

/// Look-ahead used to tell a crossing of `⟨B, p⟩ = 0` from a sliding point.
const SLIDING_PROBE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("gauge {gauge} is below the cutoff {cutoff}")]
    BelowCutoff { gauge: f64, cutoff: f64 },
    #[error("switching chatter at t = {time}: more than {flips} sign changes within one step of {step}")]
    StepTooLarge { time: f64, flips: usize, step: f64 },
    #[error("trajectory has {0} samples, too few for this operation")]
    TooFewSamples(usize),
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Default near-origin cutoff `10 · max(1, max_j ω_j)`.
pub fn default_cutoff(system: &OscillatorSystem) -> f64 {
    10.0 * system.max_frequency().max(1.0)
}

/// `sign` with a symmetric dead zone.
pub fn control_from_observation(obs: f64, dead_zone: f64) -> i8 {
    if obs > dead_zone {
        -1
    } else if obs < -dead_zone {
        1
    } else {
        0
    }
}

/// `−sign⟨B, p(x)⟩`, refusing states with `ρ(x) < cutoff`.
pub fn feedback_control(gauge: &GaugeNorm, x: &DVector<f64>, cutoff: f64) -> Result<i8, ControlError> {
    let m = gauge.solve_momentum(x)?;
    if m.gauge < cutoff {
        return Err(ControlError::BelowCutoff {
            gauge: m.gauge,
            cutoff,
        });
    }
    Ok(control_from_observation(gauge.system().b().dot(&m.p), DEAD_ZONE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPolicy {
    Feedback,
    /// `u ≡ 0`.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    MaxTime(f64),
    /// Stop once `ρ` reaches `target`, or at `max_time` at the latest.
    TargetGauge { target: f64, max_time: f64 },
}

impl StopRule {
    fn max_time(&self) -> f64 {
        match *self {
            StopRule::MaxTime(t) => t,
            StopRule::TargetGauge { max_time, .. } => max_time,
        }
    }

    fn target(&self) -> Option<f64> {
        match *self {
            StopRule::MaxTime(_) => None,
            StopRule::TargetGauge { target, .. } => Some(target),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSettings {
    /// Nominal step of the fixed-step integrator.
    pub step: f64,
    pub dead_zone: f64,
    /// Time accuracy of located switches and target crossings.
    pub event_tolerance: f64,
    /// More sign changes than this inside one step triggers step halving.
    pub max_flips_per_step: usize,
    pub max_halvings: usize,
    /// `None` uses [`default_cutoff`].
    pub cutoff: Option<f64>,
    pub policy: ControlPolicy,
}

impl SimulationSettings {
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            step: 1e-2,
            dead_zone: DEAD_ZONE,
            event_tolerance: 1e-10,
            max_flips_per_step: 10,
            max_halvings: 10,
            cutoff: None,
            policy: ControlPolicy::Feedback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxTime,
    TargetReached,
    Cutoff,
}

/// Per-sample diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `⟨B, p(x)⟩`.
    pub observation: f64,
    /// `|H_Ω(p) − 1|`.
    pub eikonal_residual: f64,
    /// `p(x) = ∂ρ/∂x`.
    pub momentum: DVector<f64>,
}

/// Sampled closed-loop motion. `controls[k]` acts on `[times[k], times[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<i8>,
    pub gauges: Vec<f64>,
    pub switch_times: Vec<f64>,
    pub diagnostics: Vec<Diagnostics>,
    pub termination: Termination,
    pub step: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,x1..xN,u,rho,obs,eik_res`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",x{i}"));
        }
        header.push_str(",u,rho,obs,eik_res");
        writeln!(out, "{header}")?;
        for k in 0..self.len() {
            let mut line = sci(self.times[k]);
            for v in self.states[k].iter() {
                line.push(',');
                line.push_str(&sci(*v));
            }
            let d = &self.diagnostics[k];
            line.push_str(&format!(
                ",{},{},{},{}",
                self.controls[k],
                sci(self.gauges[k]),
                sci(d.observation),
                sci(d.eikonal_residual)
            ));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Fixed 17-significant-digit scientific notation.
pub fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

/// One classical Runge–Kutta step of `ẋ = Ax + Bu` with `u` held fixed.
pub fn rk4_step(system: &OscillatorSystem, x: &DVector<f64>, u: f64, h: f64) -> DVector<f64> {
    let k1 = system.vector_field(x, u);
    let k2 = system.vector_field(&(x + &k1 * (0.5 * h)), u);
    let k3 = system.vector_field(&(x + &k2 * (0.5 * h)), u);
    let k4 = system.vector_field(&(x + &k3 * h), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

#[derive(Debug, Clone)]
struct Point {
    t: f64,
    x: DVector<f64>,
    momentum: Momentum,
    observation: f64,
    control: i8,
}

struct Simulator<'a> {
    gauge: &'a GaugeNorm,
    settings: SimulationSettings,
}

enum Advance {
    Done(Vec<(Point, bool)>),
    Chatter,
}

impl<'a> Simulator<'a> {
    fn point(&self, t: f64, x: DVector<f64>, warm: Option<&Momentum>) -> Result<Point, GeometryError> {
        let momentum = self.gauge.solve_momentum_from(&x, warm)?;
        let observation = self.gauge.system().b().dot(&momentum.p);
        let control = match self.settings.policy {
            ControlPolicy::Feedback => control_from_observation(observation, self.settings.dead_zone),
            ControlPolicy::Free => 0,
        };
        Ok(Point {
            t,
            x,
            momentum,
            observation,
            control,
        })
    }

    fn propagate(&self, from: &Point, tau: f64) -> Result<Point, GeometryError> {
        let x = rk4_step(self.gauge.system(), &from.x, from.control as f64, tau);
        self.point(from.t + tau, x, Some(&from.momentum))
    }

    /// Integrates over `[start.t, start.t + length]`, splitting at sign
    /// changes. Each returned point carries whether it is a switch.
    fn advance(&self, start: &Point, length: f64) -> Result<Advance, GeometryError> {
        let mut out: Vec<(Point, bool)> = Vec::new();
        let mut flips = 0;
        let end = start.t + length;
        let mut cur = start.clone();
        loop {
            let remaining = end - cur.t;
            if remaining <= 0.0 {
                break;
            }
            let next = self.propagate(&cur, remaining)?;
            if cur.control == 0 || next.control == cur.control || next.control == 0 {
                out.push((next, false));
                break;
            }
            // The sign of ⟨B, p⟩ changed: bisect for the crossing.
            let after = next.control;
            let (mut lo, mut hi) = (0.0, remaining);
            let mut hi_point = next;
            while hi - lo > self.settings.event_tolerance {
                let mid = 0.5 * (lo + hi);
                let probe = self.propagate(&cur, mid)?;
                if probe.control == cur.control {
                    lo = mid;
                } else {
                    hi = mid;
                    hi_point = probe;
                }
            }
            // Just past the crossing ⟨B, p⟩ may still sit in the dead zone.
            // Take the far side's control unless it pushes straight back
            // (a sliding point), where the dead zone's u = 0 is kept.
            if hi_point.control == 0 {
                let room = (remaining - hi).min(SLIDING_PROBE);
                let mut trial = hi_point.clone();
                trial.control = after;
                let slides = room > 0.0 && self.propagate(&trial, room)?.control == -after;
                if !slides {
                    hi_point.control = after;
                }
            }
            flips += 1;
            if flips > self.settings.max_flips_per_step {
                return Ok(Advance::Chatter);
            }
            let at_end = hi >= remaining;
            cur = hi_point.clone();
            out.push((hi_point, true));
            if at_end {
                break;
            }
        }
        Ok(Advance::Done(out))
    }

    fn advance_guarded(
        &self,
        start: &Point,
        length: f64,
        depth: usize,
    ) -> Result<Vec<(Point, bool)>, ControlError> {
        match self.advance(start, length)? {
            Advance::Done(points) => Ok(points),
            Advance::Chatter if depth < self.settings.max_halvings => {
                let half = 0.5 * length;
                let mut first = self.advance_guarded(start, half, depth + 1)?;
                let mid = first.last().map(|(p, _)| p.clone()).unwrap_or_else(|| start.clone());
                let rest = self.advance_guarded(&mid, length - (mid.t - start.t), depth + 1)?;
                first.extend(rest);
                Ok(first)
            }
            Advance::Chatter => Err(ControlError::StepTooLarge {
                time: start.t,
                flips: self.settings.max_flips_per_step,
                step: length,
            }),
        }
    }

    /// Locates `ρ = target` on the segment starting at `from`.
    fn locate_target(&self, from: &Point, length: f64, target: f64) -> Result<Point, GeometryError> {
        let (mut lo, mut hi) = (0.0, length);
        let mut best = self.propagate(from, hi)?;
        while hi - lo > self.settings.event_tolerance {
            let mid = 0.5 * (lo + hi);
            let probe = self.propagate(from, mid)?;
            if probe.momentum.gauge > target {
                lo = mid;
            } else {
                hi = mid;
                best = probe;
            }
        }
        Ok(best)
    }
}

/// Integrates the closed loop `ẋ = Ax + B u(x)` from `x0`.
///
/// The control is held fixed between samples and the RK4 step is restarted
/// at every located sign change of `⟨B, p⟩`, so each segment has a smooth
/// right-hand side.
pub fn simulate(
    gauge: &GaugeNorm,
    x0: &DVector<f64>,
    stop: StopRule,
    settings: SimulationSettings,
) -> Result<Trajectory, ControlError> {
    if !(settings.step > 0.0 && settings.step.is_finite()) {
        return Err(ControlError::InvalidSetting(format!("step must be positive, got {}", settings.step)));
    }
    let max_time = stop.max_time();
    if !(max_time >= 0.0 && max_time.is_finite()) {
        return Err(ControlError::InvalidSetting(format!("horizon must be nonnegative, got {max_time}")));
    }
    let sim = Simulator { gauge, settings };
    let cutoff = match settings.policy {
        ControlPolicy::Feedback => settings.cutoff.unwrap_or_else(|| default_cutoff(gauge.system())),
        ControlPolicy::Free => 0.0,
    };

    let start = sim.point(0.0, x0.clone(), None)?;
    if start.momentum.gauge < cutoff {
        return Err(ControlError::BelowCutoff {
            gauge: start.momentum.gauge,
            cutoff,
        });
    }

    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        gauges: Vec::new(),
        switch_times: Vec::new(),
        diagnostics: Vec::new(),
        termination: Termination::MaxTime,
        step: settings.step,
    };
    push(&mut traj, gauge, &start)?;

    if let Some(target) = stop.target() {
        if start.momentum.gauge <= target {
            traj.termination = Termination::TargetReached;
            return Ok(traj);
        }
    }

    let mut cur = start;
    'outer: while cur.t < max_time {
        let length = settings.step.min(max_time - cur.t);
        let points = sim.advance_guarded(&cur, length, 0)?;
        for (point, is_switch) in points {
            if let Some(target) = stop.target() {
                if point.momentum.gauge <= target {
                    let hit = sim.locate_target(&cur, point.t - cur.t, target)?;
                    push(&mut traj, gauge, &hit)?;
                    traj.termination = Termination::TargetReached;
                    break 'outer;
                }
            }
            if is_switch {
                traj.switch_times.push(point.t);
            }
            push(&mut traj, gauge, &point)?;
            if point.momentum.gauge < cutoff {
                traj.termination = Termination::Cutoff;
                break 'outer;
            }
            cur = point;
        }
    }
    Ok(traj)
}

fn push(traj: &mut Trajectory, gauge: &GaugeNorm, point: &Point) -> Result<(), GeometryError> {
    let h = gauge.support().support(&point.momentum.p)?;
    traj.times.push(point.t);
    traj.states.push(point.x.clone());
    traj.controls.push(point.control);
    traj.gauges.push(point.momentum.gauge);
    traj.diagnostics.push(Diagnostics {
        observation: point.observation,
        eikonal_residual: (h - 1.0).abs(),
        momentum: point.momentum.p.clone(),
    });
    Ok(())
}

/// Residual at one interior sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleResidual {
    pub index: usize,
    pub time: f64,
    pub value: f64,
}

/// Interior samples whose neighbours are far enough apart for a
/// three-point derivative, with the derivative weights.
fn derivative_stencils(traj: &Trajectory) -> Vec<(usize, [f64; 3])> {
    let min_gap = 1e-3 * traj.step;
    (1..traj.len().saturating_sub(1))
        .filter_map(|k| {
            let h1 = traj.times[k] - traj.times[k - 1];
            let h2 = traj.times[k + 1] - traj.times[k];
            if h1 < min_gap || h2 < min_gap {
                return None;
            }
            let w = [
                -h2 / (h1 * (h1 + h2)),
                (h2 - h1) / (h1 * h2),
                h1 / (h2 * (h1 + h2)),
            ];
            Some((k, w))
        })
        .collect()
}

/// `|dρ/dt − u⟨∇ρ, B⟩|` at interior samples; on closed-loop samples this is
/// `|dρ/dt + |⟨∇ρ, B⟩||`, on free segments it reduces to `|dρ/dt|`.
///
/// Samples adjacent to a very short segment (a switch just after a grid
/// point) are skipped.
pub fn polar_residual(traj: &Trajectory) -> Result<Vec<SampleResidual>, ControlError> {
    if traj.len() < 3 {
        return Err(ControlError::TooFewSamples(traj.len()));
    }
    Ok(derivative_stencils(traj)
        .into_iter()
        .map(|(k, w)| {
            let rate = w[0] * traj.gauges[k - 1] + w[1] * traj.gauges[k] + w[2] * traj.gauges[k + 1];
            let expected = traj.controls[k] as f64 * traj.diagnostics[k].observation;
            SampleResidual {
                index: k,
                time: traj.times[k],
                value: (rate - expected).abs(),
            }
        })
        .collect())
}

/// `‖ṗ + Aᵀp − (∂²ρ/∂x²)B u‖` at interior samples, `ṗ` by finite differences.
pub fn adjoint_residual(traj: &Trajectory, gauge: &GaugeNorm) -> Result<Vec<SampleResidual>, ControlError> {
    if traj.len() < 3 {
        return Err(ControlError::TooFewSamples(traj.len()));
    }
    let system = gauge.system();
    let at = system.a().transpose();
    let b = system.b();
    let mut out = Vec::new();
    for (k, w) in derivative_stencils(traj) {
        let p = |i: usize| &traj.diagnostics[i].momentum;
        let pdot = p(k - 1) * w[0] + p(k) * w[1] + p(k + 1) * w[2];
        let mut residual = pdot + &at * p(k);
        let u = traj.controls[k];
        if u != 0 {
            let center = gauge.solve_momentum(&traj.states[k])?;
            let hb = gauge.hessian_apply_from(&traj.states[k], b, &center)?;
            residual -= hb * u as f64;
        }
        out.push(SampleResidual {
            index: k,
            time: traj.times[k],
            value: residual.norm(),
        });
    }
    Ok(out)
}

/// Summary of how far the gauge dropped along a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub rho_start: f64,
    pub rho_end: f64,
    pub elapsed: f64,
    pub mean_speed: f64,
    pub cutoff_reached: bool,
}

pub fn decay_report(traj: &Trajectory) -> Result<DecayReport, ControlError> {
    if traj.len() < 2 {
        return Err(ControlError::TooFewSamples(traj.len()));
    }
    let rho_start = traj.gauges[0];
    let rho_end = *traj.gauges.last().unwrap();
    let elapsed = traj.times.last().unwrap() - traj.times[0];
    if elapsed <= 0.0 {
        return Err(ControlError::TooFewSamples(traj.len()));
    }
    Ok(DecayReport {
        rho_start,
        rho_end,
        elapsed,
        mean_speed: ((rho_start - rho_end) / elapsed).max(0.0),
        cutoff_reached: traj.termination == Termination::Cutoff,
    })
}
