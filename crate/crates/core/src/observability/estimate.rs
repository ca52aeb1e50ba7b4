use std::f64::consts::TAU;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::ObservablePair;
use crate::numerics::trapezoid;

use super::signal::MIN_SAMPLES_PER_UNIT;
use super::ObservabilityError;

/// Sampler settings for [`estimate_apriori_constant`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub samples: usize,
    pub seed: u64,
    /// The interval is `[start, start + length]`.
    pub start: f64,
    pub length: usize,
    pub samples_per_unit: usize,
    /// `∫|f|` over the interval; zero disables the perturbation.
    pub perturbation_mass: f64,
    /// Highest harmonic of the random perturbations.
    pub degree: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            start: 0.0,
            length: 1,
            samples_per_unit: 256,
            perturbation_mass: 0.0,
            degree: 8,
        }
    }
}

impl EstimateConfig {
    fn validate(&self) -> Result<(), ObservabilityError> {
        if self.samples == 0 {
            return Err(ObservabilityError::InvalidSetting("samples must be positive".into()));
        }
        if !self.start.is_finite() {
            return Err(ObservabilityError::InvalidInterval(format!("start {} is not finite", self.start)));
        }
        if self.length == 0 {
            return Err(ObservabilityError::InvalidInterval("length must be a positive integer".into()));
        }
        if self.samples_per_unit < MIN_SAMPLES_PER_UNIT {
            return Err(ObservabilityError::GridTooCoarse {
                samples_per_unit: self.samples_per_unit,
                required: MIN_SAMPLES_PER_UNIT,
            });
        }
        if !(self.perturbation_mass >= 0.0 && self.perturbation_mass.is_finite()) {
            return Err(ObservabilityError::InvalidSetting(format!(
                "perturbation_mass must be finite and nonnegative, got {}",
                self.perturbation_mass
            )));
        }
        Ok(())
    }
}

/// Trigonometric polynomial perturbation in absolute time, one-periodic.
///
/// Component `j` reads `c_j + Σ_{k=1}^{degree} a_{jk} cos 2πkt + b_{jk} sin 2πkt`,
/// stored as `[c_j, a_{j1}, b_{j1}, ..., a_{jD}, b_{jD}]` per component.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    dim: usize,
    degree: usize,
    coeffs: Vec<f64>,
}

impl Perturbation {
    pub fn new(dim: usize, degree: usize, coeffs: Vec<f64>) -> Result<Self, ObservabilityError> {
        if coeffs.len() != dim * (2 * degree + 1) {
            return Err(ObservabilityError::DimensionMismatch(format!(
                "{} coefficients for {dim} components of degree {degree}",
                coeffs.len()
            )));
        }
        Ok(Self { dim, degree, coeffs })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            degree: 0,
            coeffs: vec![0.0; dim],
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
            ..self.clone()
        }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let stride = 2 * self.degree + 1;
        let trig: Vec<(f64, f64)> = (1..=self.degree).map(|k| (TAU * k as f64 * t).sin_cos()).collect();
        DVector::from_fn(self.dim, |j, _| {
            let c = &self.coeffs[j * stride..(j + 1) * stride];
            c[0] + trig
                .iter()
                .enumerate()
                .map(|(k, (s, co))| c[2 * k + 1] * co + c[2 * k + 2] * s)
                .sum::<f64>()
        })
    }
}

/// Empirical lower bound for the best constant `c` with its maximizing sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub c_lower: f64,
    pub samples: usize,
    pub seed: u64,
    pub worst_case: WorstCase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCase {
    /// State at time zero; the interval sees its free evolution.
    pub z0: Vec<f64>,
    pub f_coeffs: Vec<f64>,
}

/// The ratio `∫_I|z| / (∫_I|𝒞z| + ∫_I|f|)` for `ż = 𝒜z + f` on `I`,
/// where `z(0) = z0` and `f` acts only on `I`.
///
/// Integrals are composite trapezoid sums on the sample grid; `z` comes from
/// RK4 with the grid step.
pub fn perturbation_ratio(
    pair: &ObservablePair,
    z0: &DVector<f64>,
    f: &Perturbation,
    start: f64,
    length: usize,
    samples_per_unit: usize,
) -> Result<f64, ObservabilityError> {
    let n = pair.state_dim();
    if z0.len() != n || f.dim != n {
        return Err(ObservabilityError::DimensionMismatch(format!(
            "state has {n} components, got z0 with {} and f with {}",
            z0.len(),
            f.dim
        )));
    }
    let a = pair.a();
    let c = pair.c();
    let h = 1.0 / samples_per_unit as f64;
    let count = length * samples_per_unit + 1;
    let forced = !f.is_zero();

    let mut z = if start == 0.0 { z0.clone() } else { pair.exp(start) * z0 };
    let mut state_norms = Vec::with_capacity(count);
    let mut output_norms = Vec::with_capacity(count);
    let mut forcing_norms = Vec::with_capacity(count);
    let step = (!forced).then(|| pair.exp(h));
    for k in 0..count {
        let t = start + k as f64 * h;
        state_norms.push(z.norm());
        output_norms.push((c * &z).norm());
        if forced {
            forcing_norms.push(f.eval(t).norm());
        }
        if k + 1 == count {
            break;
        }
        z = match &step {
            Some(e) => e * &z,
            None => {
                let (f0, fm, f1) = (f.eval(t), f.eval(t + h / 2.0), f.eval(t + h));
                let k1 = a * &z + f0;
                let k2 = a * (&z + &k1 * (h / 2.0)) + &fm;
                let k3 = a * (&z + &k2 * (h / 2.0)) + fm;
                let k4 = a * (&z + &k3 * h) + f1;
                &z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
            }
        };
    }
    let num = trapezoid(&state_norms, h);
    let den = trapezoid(&output_norms, h) + trapezoid(&forcing_norms, h);
    Ok(if den > 0.0 { num / den } else { f64::INFINITY })
}

/// Random sample `i` of the estimate: a uniform direction on the unit sphere
/// and a perturbation with uniform coefficients in `[−1, 1]` rescaled to the
/// configured mass on the interval.
fn draw(config: &EstimateConfig, n: usize, index: u64) -> (DVector<f64>, Perturbation) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let z0 = loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-6 {
            break v / norm;
        }
    };
    if config.perturbation_mass == 0.0 {
        return (z0, Perturbation::zero(n));
    }
    let coeffs = (0..n * (2 * config.degree + 1))
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let raw = Perturbation::new(n, config.degree, coeffs).expect("coefficient count matches");
    let h = 1.0 / config.samples_per_unit as f64;
    let norms: Vec<f64> = (0..=config.length * config.samples_per_unit)
        .map(|k| raw.eval(config.start + k as f64 * h).norm())
        .collect();
    let mass = trapezoid(&norms, h);
    let f = if mass > 0.0 {
        raw.scaled(config.perturbation_mass / mass)
    } else {
        Perturbation::zero(n)
    };
    (z0, f)
}

/// Largest sampled ratio `∫|z| / (∫|𝒞z| + ∫|f|)`: a lower bound for the best
/// constant of the a priori estimate on the configured interval.
///
/// Sample `i` draws from its own ChaCha stream, so the report depends only on
/// the seed and the sample count, never on the thread schedule.
pub fn estimate_apriori_constant(
    pair: &ObservablePair,
    config: &EstimateConfig,
) -> Result<EstimateReport, ObservabilityError> {
    if !pair.observable() {
        return Err(ObservabilityError::NotObservable);
    }
    config.validate()?;
    let n = pair.state_dim();
    let ratios = (0..config.samples as u64)
        .into_par_iter()
        .map(|i| {
            let (z0, f) = draw(config, n, i);
            perturbation_ratio(pair, &z0, &f, config.start, config.length, config.samples_per_unit)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    // First index among equal maxima.
    let (best, c_lower) = ratios
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &r)| if r > acc.1 { (i, r) } else { acc });
    let (z0, f) = draw(config, n, best as u64);
    Ok(EstimateReport {
        c_lower,
        samples: config.samples,
        seed: config.seed,
        worst_case: WorstCase {
            z0: z0.iter().copied().collect(),
            f_coeffs: if f.is_zero() { Vec::new() } else { f.coeffs.clone() },
        },
    })
}
