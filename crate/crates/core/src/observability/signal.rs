use nalgebra::{DMatrix, DVector};

use crate::model::ObservablePair;
use crate::numerics::{fornberg_weights, trapezoid, UniformDerivative};

use super::ObservabilityError;

/// Finest grid the differentiation schemes accept, in samples per unit time.
pub const MIN_SAMPLES_PER_UNIT: usize = 16;

/// Extra accuracy order of every derivative stencil.
const STENCIL_ACCURACY: usize = 6;

/// Integrals below this fraction of the signal's own scale count as zero.
const ZERO_FRACTION: f64 = 1e-8;

/// A vector signal sampled on the uniform grid `start + k/samples_per_unit`
/// covering `[start, start + length]` with an integer `length`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    start: f64,
    length: usize,
    samples_per_unit: usize,
    /// `channels[i][k]`: component `i` at grid point `k`.
    channels: Vec<Vec<f64>>,
}

impl SampledSignal {
    pub fn new(
        start: f64,
        length: usize,
        samples_per_unit: usize,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self, ObservabilityError> {
        if !start.is_finite() {
            return Err(ObservabilityError::InvalidInterval(format!("start {start} is not finite")));
        }
        if length == 0 {
            return Err(ObservabilityError::InvalidInterval("length must be a positive integer".into()));
        }
        if samples_per_unit == 0 {
            return Err(ObservabilityError::InvalidSetting("samples_per_unit must be positive".into()));
        }
        if channels.is_empty() {
            return Err(ObservabilityError::DimensionMismatch("signal has no components".into()));
        }
        let expected = length * samples_per_unit + 1;
        if let Some(bad) = channels.iter().find(|c| c.len() != expected) {
            return Err(ObservabilityError::DimensionMismatch(format!(
                "channel has {} samples, grid has {expected}",
                bad.len()
            )));
        }
        Ok(Self {
            start,
            length,
            samples_per_unit,
            channels,
        })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(
        start: f64,
        length: usize,
        samples_per_unit: usize,
        dim: usize,
        f: impl Fn(f64) -> DVector<f64>,
    ) -> Result<Self, ObservabilityError> {
        let count = length * samples_per_unit + 1;
        let mut channels = vec![Vec::with_capacity(count); dim];
        for k in 0..count {
            let v = f(start + k as f64 / samples_per_unit as f64);
            if v.len() != dim {
                return Err(ObservabilityError::DimensionMismatch(format!(
                    "sample has {} components, expected {dim}",
                    v.len()
                )));
            }
            for (c, x) in channels.iter_mut().zip(v.iter()) {
                c.push(*x);
            }
        }
        Self::new(start, length, samples_per_unit, channels)
    }

    pub fn scalar(
        start: f64,
        length: usize,
        samples_per_unit: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self, ObservabilityError> {
        Self::from_fn(start, length, samples_per_unit, 1, |t| DVector::from_element(1, f(t)))
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.start + self.length as f64
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn samples_per_unit(&self) -> usize {
        self.samples_per_unit
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.samples_per_unit as f64
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn sample(&self, k: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.channels.iter().map(|c| c[k]))
    }

    /// Euclidean norm at every grid point.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.channels.iter().map(|c| c[k] * c[k]).sum::<f64>().sqrt())
            .collect()
    }

    /// `∫|s(t)| dt` with the Euclidean norm, composite trapezoid.
    pub fn l1_norm(&self) -> f64 {
        trapezoid(&self.norms(), self.dt())
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().into_iter().fold(0.0, f64::max)
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.start == other.start
            && self.length == other.length
            && self.samples_per_unit == other.samples_per_unit
    }

    fn require_resolution(&self, stencil: usize) -> Result<(), ObservabilityError> {
        if self.samples_per_unit < MIN_SAMPLES_PER_UNIT || self.len() < stencil {
            return Err(ObservabilityError::GridTooCoarse {
                samples_per_unit: self.samples_per_unit,
                required: MIN_SAMPLES_PER_UNIT.max(stencil.div_ceil(self.length)),
            });
        }
        Ok(())
    }

    fn derivative(&self, i: usize, order: usize) -> Vec<f64> {
        if order == 0 {
            return self.channels[i].clone();
        }
        UniformDerivative::new(order, STENCIL_ACCURACY).apply(&self.channels[i], self.dt())
    }
}

/// `z ↦ (y, f) = (𝒞z, ż − 𝒜z)` with `ż` from fourth-order differences.
pub fn phi_map(
    pair: &ObservablePair,
    z: &SampledSignal,
) -> Result<(SampledSignal, SampledSignal), ObservabilityError> {
    let n = pair.state_dim();
    if z.dim() != n {
        return Err(ObservabilityError::DimensionMismatch(format!(
            "signal has {} components, state has {n}",
            z.dim()
        )));
    }
    z.require_resolution(UniformDerivative::new(1, STENCIL_ACCURACY).width())?;
    let (a, c) = (pair.a(), pair.c());
    let derivs: Vec<Vec<f64>> = (0..n).map(|i| z.derivative(i, 1)).collect();
    let mut y = vec![vec![0.0; z.len()]; pair.output_dim()];
    let mut f = derivs;
    for k in 0..z.len() {
        let zk = z.sample(k);
        let yk = c * &zk;
        let azk = a * &zk;
        for (i, yi) in y.iter_mut().enumerate() {
            yi[k] = yk[i];
        }
        for (i, fi) in f.iter_mut().enumerate() {
            fi[k] -= azk[i];
        }
    }
    Ok((
        SampledSignal::new(z.start, z.length, z.samples_per_unit, y)?,
        SampledSignal::new(z.start, z.length, z.samples_per_unit, f)?,
    ))
}

/// Max-norm residual of `y⁽ⁿ⁾ = Σ_{k<n} ∂ᵏ f_{n−k}` for a chain of length `n`
/// observed at its head.
pub fn observation_relation_residual(
    n: usize,
    y: &SampledSignal,
    f: &SampledSignal,
) -> Result<f64, ObservabilityError> {
    if n == 0 {
        return Err(ObservabilityError::InvalidSetting("chain length must be positive".into()));
    }
    if y.dim() != 1 || f.dim() != n {
        return Err(ObservabilityError::DimensionMismatch(format!(
            "need scalar y and {n}-component f, got {} and {}",
            y.dim(),
            f.dim()
        )));
    }
    if !y.same_grid(f) {
        return Err(ObservabilityError::DimensionMismatch("y and f live on different grids".into()));
    }
    y.require_resolution(UniformDerivative::new(n, STENCIL_ACCURACY).width())?;
    let lhs = y.derivative(0, n);
    let mut rhs = vec![0.0; y.len()];
    for k in 0..n {
        for (r, v) in rhs.iter_mut().zip(f.derivative(n - k - 1, k)) {
            *r += v;
        }
    }
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| (l - r).abs())
        .fold(0.0, f64::max))
}

/// Value of `∫|y'| / ((∫|y⁽ⁿ⁾|)^{1/n} (∫|y|)^{(n−1)/n})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KolmogorovRatio {
    Finite(f64),
    /// The right-hand side vanishes while `∫|y'|` does not.
    Infinite,
}

impl KolmogorovRatio {
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(v) => v,
            Self::Infinite => f64::INFINITY,
        }
    }
}

/// Ratio of the two sides of `∫|y'| ≲ (∫|y⁽ⁿ⁾|)^{1/n} (∫|y|)^{(n−1)/n}`.
///
/// A signal with no first derivative has ratio 0 whatever the right-hand side.
pub fn kolmogorov_ratio(y: &SampledSignal, n: usize) -> Result<KolmogorovRatio, ObservabilityError> {
    if n < 2 {
        return Err(ObservabilityError::InvalidSetting(format!("order must be at least 2, got {n}")));
    }
    if y.dim() != 1 {
        return Err(ObservabilityError::DimensionMismatch(format!(
            "need a scalar signal, got {} components",
            y.dim()
        )));
    }
    y.require_resolution(UniformDerivative::new(n, STENCIL_ACCURACY).width())?;
    let dt = y.dt();
    let abs_integral = |v: Vec<f64>| trapezoid(&v.iter().map(|x| x.abs()).collect::<Vec<_>>(), dt);
    let mass = abs_integral(y.derivative(0, 0));
    let slope = abs_integral(y.derivative(0, 1));
    let top = abs_integral(y.derivative(0, n));
    let scale = y.max_norm().max(mass).max(slope);
    let zero = ZERO_FRACTION * scale;
    if slope <= zero {
        return Ok(KolmogorovRatio::Finite(0.0));
    }
    if top <= zero || mass <= zero {
        return Ok(KolmogorovRatio::Infinite);
    }
    let nf = n as f64;
    Ok(KolmogorovRatio::Finite(
        slope / (top.powf(1.0 / nf) * mass.powf((nf - 1.0) / nf)),
    ))
}

/// Recovers `z` from `(y, f)` on an observable pair: `z(t_k) =
/// exp((t_k − t_0)𝒜)z(t_0) + w_k` where `w` is the forced response, and
/// `z(t_0)` is the least-squares fit of `y_k − 𝒞w_k`.
pub fn reconstruct_state(
    pair: &ObservablePair,
    y: &SampledSignal,
    f: &SampledSignal,
) -> Result<SampledSignal, ObservabilityError> {
    if !pair.observable() {
        return Err(ObservabilityError::NotObservable);
    }
    let (n, m) = (pair.state_dim(), pair.output_dim());
    if y.dim() != m || f.dim() != n {
        return Err(ObservabilityError::DimensionMismatch(format!(
            "need {m}-component y and {n}-component f, got {} and {}",
            y.dim(),
            f.dim()
        )));
    }
    if !y.same_grid(f) {
        return Err(ObservabilityError::DimensionMismatch("y and f live on different grids".into()));
    }
    y.require_resolution(4)?;
    let (a, c) = (pair.a(), pair.c());
    let h = y.dt();
    let count = y.len();

    // Forced response by RK4; midpoint forcing from cubic interpolation.
    let mid_weights: Vec<(usize, Vec<f64>)> = (0..count - 1)
        .map(|k| {
            let s = k.saturating_sub(1).min(count - 4);
            let xs: Vec<f64> = (s..s + 4).map(|i| i as f64).collect();
            (s, fornberg_weights(k as f64 + 0.5, &xs, 0))
        })
        .collect();
    let forcing_mid = |k: usize| -> DVector<f64> {
        let (s, w) = &mid_weights[k];
        w.iter()
            .enumerate()
            .fold(DVector::zeros(n), |acc, (i, wi)| acc + f.sample(s + i) * *wi)
    };
    let mut w = vec![DVector::zeros(n)];
    for k in 0..count - 1 {
        let (f0, fm, f1) = (f.sample(k), forcing_mid(k), f.sample(k + 1));
        let wk = &w[k];
        let k1 = a * wk + f0;
        let k2 = a * (wk + &k1 * (h / 2.0)) + &fm;
        let k3 = a * (wk + &k2 * (h / 2.0)) + fm;
        let k4 = a * (wk + &k3 * h) + f1;
        w.push(wk + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
    }

    let step = pair.exp(h);
    let mut transfer = DMatrix::identity(n, n);
    let mut design = DMatrix::zeros(m * count, n);
    let mut rhs = DVector::zeros(m * count);
    let mut transfers = Vec::with_capacity(count);
    for k in 0..count {
        design.rows_mut(k * m, m).copy_from(&(c * &transfer));
        rhs.rows_mut(k * m, m).copy_from(&(y.sample(k) - c * &w[k]));
        transfers.push(transfer.clone());
        transfer = &step * transfer;
    }
    let z0 = design
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| ObservabilityError::IllConditionedTransform(e.to_string()))?;
    SampledSignal::from_fn(y.start, y.length, y.samples_per_unit, n, |t| {
        let k = ((t - y.start) * y.samples_per_unit as f64).round() as usize;
        &transfers[k] * &z0 + &w[k]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn oscillator_pair() -> ObservablePair {
        ObservablePair::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(
            SampledSignal::new(0.0, 0, 16, vec![vec![0.0]]),
            Err(ObservabilityError::InvalidInterval(_))
        ));
        assert!(matches!(
            SampledSignal::new(0.0, 1, 4, vec![vec![0.0; 4]]),
            Err(ObservabilityError::DimensionMismatch(_))
        ));
        let coarse = SampledSignal::scalar(0.0, 1, 8, |t| t).unwrap();
        assert!(matches!(
            kolmogorov_ratio(&coarse, 2),
            Err(ObservabilityError::GridTooCoarse { samples_per_unit: 8, .. })
        ));
    }

    #[test]
    fn phi_of_free_solution_vanishes() {
        let pair = oscillator_pair();
        let z0 = DVector::from_vec(vec![0.3, -0.8]);
        let z = SampledSignal::from_fn(0.0, 1, 64, 2, |t| pair.exp(t) * &z0).unwrap();
        let (y, f) = phi_map(&pair, &z).unwrap();
        assert!(f.max_norm() <= 1e-6, "{}", f.max_norm());
        for k in 0..z.len() {
            assert_relative_eq!(y.channel(0)[k], z.channel(1)[k]);
        }
    }

    #[test]
    fn phi_of_constant_under_zero_dynamics() {
        let pair = ObservablePair::new(DMatrix::zeros(2, 2), DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        let z = SampledSignal::from_fn(0.0, 2, 16, 2, |_| DVector::from_vec(vec![1.5, -0.5])).unwrap();
        let (y, f) = phi_map(&pair, &z).unwrap();
        assert!(f.max_norm() <= 1e-12);
        assert!(y.channel(0).iter().all(|v| (v - 0.5).abs() <= 1e-15));
    }

    #[test]
    fn phi_of_chain_ramp() {
        let (a, c) = super::super::chain_form(&[2]);
        let pair = ObservablePair::new(a, c).unwrap();
        let z = SampledSignal::from_fn(0.0, 1, 32, 2, |t| DVector::from_vec(vec![t, 1.0])).unwrap();
        let (y, f) = phi_map(&pair, &z).unwrap();
        assert!(f.max_norm() <= 1e-12, "{}", f.max_norm());
        for (k, t) in z.times().into_iter().enumerate() {
            assert_relative_eq!(y.channel(0)[k], t);
        }
    }

    #[test]
    fn relation_for_unperturbed_chain() {
        let y = SampledSignal::scalar(0.0, 1, 64, |_| 1.0).unwrap();
        let f = SampledSignal::new(0.0, 1, 64, vec![vec![0.0; 65]; 2]).unwrap();
        assert!(observation_relation_residual(2, &y, &f).unwrap() <= 1e-6);
    }

    #[test]
    fn relation_single_step_chain() {
        // y' = f₁
        let y = SampledSignal::scalar(0.0, 1, 64, |t| (3.0 * t).sin()).unwrap();
        let f = SampledSignal::scalar(0.0, 1, 64, |t| 3.0 * (3.0 * t).cos()).unwrap();
        assert!(observation_relation_residual(1, &y, &f).unwrap() <= 1e-5);
    }

    #[test]
    fn relation_for_forced_chain() {
        // ż₁ = z₂ + f₁, ż₂ = f₂ with f = (cos t, sin 2t), z(0) = (1, 0),
        // so z₂ = (1 − cos 2t)/2.
        let z1 = |t: f64| 1.0 + t / 2.0 - (2.0 * t).sin() / 4.0 + t.sin();
        let y = SampledSignal::scalar(0.0, 1, 256, z1).unwrap();
        let f = SampledSignal::from_fn(0.0, 1, 256, 2, |t| DVector::from_vec(vec![t.cos(), (2.0 * t).sin()])).unwrap();
        assert!(observation_relation_residual(2, &y, &f).unwrap() <= 1e-6);
    }

    #[test]
    fn kolmogorov_sine_oracle() {
        for k in [1.0, 2.0, 4.0] {
            let y = SampledSignal::scalar(0.0, 1, 1024, |t| (2.0 * PI * k * t).sin()).unwrap();
            let r = kolmogorov_ratio(&y, 2).unwrap().value();
            assert!((r - 1.0).abs() <= 1e-3, "k = {k}: {r}");
        }
    }

    #[test]
    fn kolmogorov_degenerate_cases() {
        let c = SampledSignal::scalar(0.0, 1, 64, |_| 2.5).unwrap();
        assert_eq!(kolmogorov_ratio(&c, 2).unwrap(), KolmogorovRatio::Finite(0.0));
        let zero = SampledSignal::scalar(0.0, 1, 64, |_| 0.0).unwrap();
        assert_eq!(kolmogorov_ratio(&zero, 3).unwrap(), KolmogorovRatio::Finite(0.0));
        let ramp = SampledSignal::scalar(0.0, 1, 64, |t| t).unwrap();
        assert_eq!(kolmogorov_ratio(&ramp, 2).unwrap(), KolmogorovRatio::Infinite);
    }

    #[test]
    fn reconstruction_inverts_phi() {
        let pair = oscillator_pair();
        let zero_y = SampledSignal::new(0.0, 1, 64, vec![vec![0.0; 65]]).unwrap();
        let zero_f = SampledSignal::new(0.0, 1, 64, vec![vec![0.0; 65]; 2]).unwrap();
        assert_eq!(reconstruct_state(&pair, &zero_y, &zero_f).unwrap().max_norm(), 0.0);

        let z = SampledSignal::from_fn(0.0, 1, 128, 2, |t| DVector::from_vec(vec![t.cos() + t * t, 0.5 - t])).unwrap();
        let (y, f) = phi_map(&pair, &z).unwrap();
        let back = reconstruct_state(&pair, &y, &f).unwrap();
        for k in 0..z.len() {
            assert!((back.sample(k) - z.sample(k)).amax() <= 1e-6);
        }
    }
}
