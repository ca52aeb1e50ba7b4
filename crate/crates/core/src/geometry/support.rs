use nalgebra::DVector;

use crate::model::OscillatorSystem;

use super::torus::{QuadratureSpec, TorusQuadrature};
use super::GeometryError;

/// `H_Ω(p) = lim (1/T) ∫₀ᵀ |⟨exp(tA)B, p⟩| dt`, evaluated as a torus average.
#[derive(Debug, Clone)]
pub struct SupportFunction {
    system: OscillatorSystem,
    quadrature: TorusQuadrature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportGradient {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Some block amplitude vanished; its gradient block is zero.
    pub degenerate: bool,
}

impl SupportFunction {
    pub fn new(system: &OscillatorSystem, spec: QuadratureSpec) -> Self {
        Self {
            system: system.clone(),
            quadrature: TorusQuadrature::new(spec),
        }
    }

    pub fn with_defaults(system: &OscillatorSystem) -> Self {
        Self::new(system, QuadratureSpec::default())
    }

    pub fn system(&self) -> &OscillatorSystem {
        &self.system
    }

    pub fn quadrature(&self) -> &TorusQuadrature {
        &self.quadrature
    }

    /// Per-block amplitudes of `t ↦ ⟨exp(tA)B, p⟩`.
    pub fn amplitudes(&self, p: &DVector<f64>) -> Vec<f64> {
        self.system
            .frequencies()
            .iter()
            .enumerate()
            .map(|(j, &w)| (p[2 * j] / w).hypot(p[2 * j + 1]))
            .collect()
    }

    fn check(&self, p: &DVector<f64>) -> Result<(), GeometryError> {
        if p.len() != self.system.dim() {
            return Err(GeometryError::DimensionMismatch {
                got: p.len(),
                expected: self.system.dim(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(())
    }

    pub fn support(&self, p: &DVector<f64>) -> Result<f64, GeometryError> {
        self.check(p)?;
        Ok(self.quadrature.evaluate(&self.amplitudes(p))?.value)
    }

    /// `∇H_Ω(p)`: the average of `sign⟨exp(tA)B, p⟩ · exp(tA)B`.
    pub fn support_gradient(&self, p: &DVector<f64>) -> Result<SupportGradient, GeometryError> {
        self.check(p)?;
        if p.iter().all(|&v| v == 0.0) {
            return Err(GeometryError::ZeroCovector);
        }
        let amps = self.amplitudes(p);
        let avg = self.quadrature.evaluate(&amps)?;
        let mut gradient = DVector::zeros(p.len());
        for (j, &w) in self.system.frequencies().iter().enumerate() {
            let (r, g) = (amps[j], avg.gradient[j]);
            if g == 0.0 || r == 0.0 {
                continue;
            }
            gradient[2 * j] = g * p[2 * j] / (w * w * r);
            gradient[2 * j + 1] = g * p[2 * j + 1] / r;
        }
        Ok(SupportGradient {
            value: avg.value,
            gradient,
            degenerate: avg.degenerate,
        })
    }

    /// Direct long-time average of `|⟨exp(tA)B, p⟩|` over `[0, horizon]` by the
    /// composite trapezoid rule with the given step. Independent of the torus
    /// quadrature; used for cross-validation.
    pub fn time_average(&self, p: &DVector<f64>, horizon: f64, step: f64) -> f64 {
        let w = self.system.frequencies();
        let n = (horizon / step).ceil() as usize;
        let h = horizon / n as f64;
        let integrand = |t: f64| -> f64 {
            w.iter()
                .enumerate()
                .map(|(j, &wj)| {
                    let (s, c) = (wj * t).sin_cos();
                    p[2 * j] * s / wj + p[2 * j + 1] * c
                })
                .sum::<f64>()
                .abs()
        };
        let mut sum = 0.5 * (integrand(0.0) + integrand(horizon));
        for i in 1..n {
            sum += integrand(i as f64 * h);
        }
        sum * h / horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sf(w: &[f64]) -> SupportFunction {
        SupportFunction::with_defaults(&OscillatorSystem::new(w).unwrap())
    }

    #[test]
    fn single_oscillator_values() {
        let one = sf(&[1.0]);
        assert_relative_eq!(one.support(&DVector::from_vec(vec![1.0, 0.0])).unwrap(), 2.0 / PI, epsilon = 1e-15);
        assert_eq!(one.support(&DVector::zeros(2)).unwrap(), 0.0);
        let two = sf(&[2.0]);
        assert_relative_eq!(two.support(&DVector::from_vec(vec![1.0, 0.0])).unwrap(), 1.0 / PI, epsilon = 1e-15);
    }

    #[test]
    fn single_oscillator_gradients() {
        let one = sf(&[1.0]);
        let g = one.support_gradient(&DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_relative_eq!(g.gradient[0], 0.0);
        assert_relative_eq!(g.gradient[1], 2.0 / PI, epsilon = 1e-15);
        let g = one.support_gradient(&DVector::from_vec(vec![3.0, 0.0])).unwrap();
        assert_relative_eq!(g.gradient[0], 2.0 / PI, epsilon = 1e-15);
        assert_relative_eq!(g.gradient[1], 0.0);
        assert_eq!(
            one.support_gradient(&DVector::zeros(2)).unwrap_err(),
            GeometryError::ZeroCovector
        );
    }

    #[test]
    fn euler_relation_two_oscillators() {
        let s = sf(&[1.0, 2f64.sqrt()]);
        let p = DVector::from_vec(vec![0.4, -1.2, 0.9, 0.3]);
        let g = s.support_gradient(&p).unwrap();
        assert_relative_eq!(p.dot(&g.gradient), g.value, epsilon = 1e-12);
        assert!(!g.degenerate);
    }

    #[test]
    fn degenerate_block_flagged() {
        let s = sf(&[1.0, 2f64.sqrt()]);
        let p = DVector::from_vec(vec![0.4, -1.2, 0.0, 0.0]);
        let g = s.support_gradient(&p).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.gradient[2], 0.0);
        assert_eq!(g.gradient[3], 0.0);
        assert_relative_eq!(p.dot(&g.gradient), g.value, epsilon = 1e-12);
    }

    #[test]
    fn wrong_length_rejected() {
        let s = sf(&[1.0]);
        assert!(matches!(
            s.support(&DVector::zeros(3)),
            Err(GeometryError::DimensionMismatch { got: 3, expected: 2 })
        ));
    }

    #[test]
    fn time_average_single_oscillator() {
        let s = sf(&[1.0]);
        let p = DVector::from_vec(vec![1.0, 0.0]);
        // Whole number of half-periods: exact up to the kink error of the rule.
        let avg = s.time_average(&p, 100.0 * PI, 1e-3);
        assert_relative_eq!(avg, 2.0 / PI, epsilon = 1e-6);
    }
}
