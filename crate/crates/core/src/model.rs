//! Controlled linear oscillator systems `ẋ = Ax + Bu`, `|u| ≤ 1`, and the
//! observed pairs `(𝒜, 𝒞)` derived from them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative singular-value threshold used by every rank test.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Two frequencies closer than this are treated as equal.
pub const DUPLICATE_FREQUENCY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("frequency list is empty")]
    EmptyFrequencyList,
    #[error("frequency {index} is not a positive finite number: {value}")]
    NonPositiveFrequency { index: usize, value: f64 },
    #[error("frequencies {first} and {second} coincide ({value}); the system is not controllable")]
    DuplicateFrequency {
        first: usize,
        second: usize,
        value: f64,
    },
    #[error("controllability matrix has rank {rank} < {dim}")]
    NotControllable { rank: usize, dim: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// JSON form of a system: `{"frequencies": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub frequencies: Vec<f64>,
}

impl SystemSpec {
    pub fn build(&self) -> Result<OscillatorSystem, ModelError> {
        OscillatorSystem::new(&self.frequencies)
    }
}

/// A chain of `d` independent oscillators driven by one bounded force.
///
/// Block `j` acts on coordinates `(x[2j], x[2j+1])` (position, velocity) with
/// `A_j = [[0, 1], [-ω_j², 0]]` and `B_j = (0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorSystem {
    frequencies: Vec<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl OscillatorSystem {
    /// Builds and validates the block-oscillator system for the given frequencies.
    pub fn new(frequencies: &[f64]) -> Result<Self, ModelError> {
        if frequencies.is_empty() {
            return Err(ModelError::EmptyFrequencyList);
        }
        for (index, &value) in frequencies.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NonPositiveFrequency { index, value });
            }
        }
        for i in 0..frequencies.len() {
            for j in (i + 1)..frequencies.len() {
                if (frequencies[i] - frequencies[j]).abs() < DUPLICATE_FREQUENCY_TOLERANCE {
                    return Err(ModelError::DuplicateFrequency {
                        first: i,
                        second: j,
                        value: frequencies[i],
                    });
                }
            }
        }

        let n = 2 * frequencies.len();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for (j, &w) in frequencies.iter().enumerate() {
            a[(2 * j, 2 * j + 1)] = 1.0;
            a[(2 * j + 1, 2 * j)] = -w * w;
            b[2 * j + 1] = 1.0;
        }
        let system = Self {
            frequencies: frequencies.to_vec(),
            a,
            b,
        };
        let rank = numerical_rank(&system.controllability_matrix());
        if rank < n {
            return Err(ModelError::NotControllable { rank, dim: n });
        }
        Ok(system)
    }

    pub fn dof(&self) -> usize {
        self.frequencies.len()
    }

    /// State dimension `N = 2d`.
    pub fn dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn max_frequency(&self) -> f64 {
        self.frequencies.iter().cloned().fold(0.0, f64::max)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn control_bound(&self) -> f64 {
        1.0
    }

    /// Kalman matrix `[B, AB, ..., A^{N-1}B]`.
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        krylov_columns(&self.a, &self.b)
    }

    /// `exp(tA)`, assembled from exact 2×2 rotations.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut e = DMatrix::zeros(n, n);
        for (j, &w) in self.frequencies.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            let k = 2 * j;
            e[(k, k)] = c;
            e[(k, k + 1)] = s / w;
            e[(k + 1, k)] = -w * s;
            e[(k + 1, k + 1)] = c;
        }
        e
    }

    /// Free motion `exp(tA)x` without forming the full matrix.
    pub fn free_motion(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut out = x.clone();
        for (j, &w) in self.frequencies.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            let (q, v) = (x[2 * j], x[2 * j + 1]);
            out[2 * j] = c * q + s / w * v;
            out[2 * j + 1] = -w * s * q + c * v;
        }
        out
    }

    /// Right-hand side `Ax + Bu`.
    pub fn vector_field(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        let mut dx = DVector::zeros(x.len());
        for (j, &w) in self.frequencies.iter().enumerate() {
            dx[2 * j] = x[2 * j + 1];
            dx[2 * j + 1] = -w * w * x[2 * j] + u;
        }
        dx
    }

    /// Integer relation `Σ k_j ω_j ≈ 0` with `|k_j| ≤ 64`, if one exists.
    ///
    /// Exhaustive for `d ≤ 3`; larger systems are only checked pairwise.
    pub fn rational_dependence(&self) -> Option<Vec<i64>> {
        const MAX_COEFF: i64 = 64;
        const TOL: f64 = 1e-9;
        let w = &self.frequencies;
        let d = w.len();
        if d == 3 {
            for k0 in -MAX_COEFF..=MAX_COEFF {
                for k1 in -MAX_COEFF..=MAX_COEFF {
                    let partial = k0 as f64 * w[0] + k1 as f64 * w[1];
                    let k2 = (-partial / w[2]).round();
                    if k2.abs() > MAX_COEFF as f64 || (k0 == 0 && k1 == 0 && k2 == 0.0) {
                        continue;
                    }
                    // Keep one representative of each ±k pair.
                    let first_nonzero = [k0, k1, k2 as i64].into_iter().find(|&k| k != 0);
                    if first_nonzero.unwrap_or(0) < 0 {
                        continue;
                    }
                    if (partial + k2 * w[2]).abs() < TOL {
                        return Some(vec![k0, k1, k2 as i64]);
                    }
                }
            }
            return None;
        }
        for i in 0..d {
            for j in (i + 1)..d {
                for ki in 1..=MAX_COEFF {
                    let kj = (-(ki as f64) * w[i] / w[j]).round();
                    if kj != 0.0 && kj.abs() <= MAX_COEFF as f64 && (ki as f64 * w[i] + kj * w[j]).abs() < TOL {
                        let mut rel = vec![0; d];
                        rel[i] = ki;
                        rel[j] = kj as i64;
                        return Some(rel);
                    }
                }
            }
        }
        None
    }
}

/// Observed linear system `ż = 𝒜z`, `y = 𝒞z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservablePair {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    observable: bool,
}

impl ObservablePair {
    /// Wraps `(𝒜, 𝒞)` and records its observability certificate.
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, ModelError> {
        let observable = check_observability(&a, &c)?;
        Ok(Self { a, c, observable })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn observable(&self) -> bool {
        self.observable
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Stacked `[𝒞; 𝒞𝒜; ...; 𝒞𝒜^{n-1}]`.
    pub fn observability_matrix(&self) -> DMatrix<f64> {
        observability_matrix(&self.a, &self.c)
    }

    /// `exp(t𝒜)` by scaling and squaring.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        (&self.a * t).exp()
    }
}

/// The adjoint pair `(−Aᵀ, Bᵀ)` governing the momentum under free motion.
pub fn adjoint_pair(system: &OscillatorSystem) -> ObservablePair {
    let a = -system.a().transpose();
    let b = system.b();
    let c = DMatrix::from_row_slice(1, b.len(), b.as_slice());
    ObservablePair::new(a, c).expect("adjoint pair dimensions are consistent by construction")
}

/// Rank test on `[𝒞; 𝒞𝒜; ...; 𝒞𝒜^{n−1}]`.
pub fn check_observability(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<bool, ModelError> {
    if a.nrows() != a.ncols() {
        return Err(ModelError::DimensionMismatch(format!(
            "𝒜 must be square, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if c.ncols() != a.nrows() {
        return Err(ModelError::DimensionMismatch(format!(
            "𝒞 has {} columns but 𝒜 is {}×{}",
            c.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Ok(true);
    }
    Ok(numerical_rank(&observability_matrix(a, c)) == a.nrows())
}

pub(crate) fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = c.nrows();
    let mut out = DMatrix::zeros(n * m, n);
    let mut block = c.clone();
    for k in 0..n {
        out.rows_mut(k * m, m).copy_from(&block);
        block = &block * a;
    }
    out
}

fn krylov_columns(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        out.set_column(k, &col);
        col = a * col;
    }
    out
}

/// Number of singular values above `RANK_TOLERANCE × σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * smax).count()
}

/// 2-norm condition number `σ_max / σ_min`.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_oscillator_matrices() {
        let s = OscillatorSystem::new(&[1.0]).unwrap();
        assert_eq!(s.a(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        assert_eq!(s.b(), &DVector::from_vec(vec![0.0, 1.0]));
        assert_eq!(numerical_rank(&s.controllability_matrix()), 2);
    }

    #[test]
    fn duplicate_frequency_rejected() {
        assert_eq!(
            OscillatorSystem::new(&[1.0, 1.0]),
            Err(ModelError::DuplicateFrequency {
                first: 0,
                second: 1,
                value: 1.0
            })
        );
    }

    #[test]
    fn duplicate_frequencies_really_are_uncontrollable() {
        // Assemble the block matrices directly, bypassing validation.
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = -1.0;
        a[(2, 3)] = 1.0;
        a[(3, 2)] = -1.0;
        let b = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(numerical_rank(&krylov_columns(&a, &b)), 2);
    }

    #[test]
    fn two_oscillators_full_rank() {
        let s = OscillatorSystem::new(&[1.0, 2f64.sqrt()]).unwrap();
        assert_eq!(s.dim(), 4);
        assert_eq!(numerical_rank(&s.controllability_matrix()), 4);
        assert_relative_eq!(s.a()[(3, 2)], -2.0, epsilon = 1e-15);
        assert_eq!(s.b()[3], 1.0);
    }

    #[test]
    fn bad_frequency_lists() {
        assert_eq!(OscillatorSystem::new(&[]), Err(ModelError::EmptyFrequencyList));
        assert!(matches!(
            OscillatorSystem::new(&[1.0, -2.0]),
            Err(ModelError::NonPositiveFrequency { index: 1, .. })
        ));
        assert!(matches!(
            OscillatorSystem::new(&[f64::NAN]),
            Err(ModelError::NonPositiveFrequency { index: 0, .. })
        ));
    }

    #[test]
    fn eigenvalues_are_plus_minus_i_omega() {
        let w = [0.7, 1.3, 2.9];
        let s = OscillatorSystem::new(&w).unwrap();
        let ev = s.a().complex_eigenvalues();
        let mut imag: Vec<f64> = ev.iter().map(|z| z.im).collect();
        imag.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut expected: Vec<f64> = w.iter().flat_map(|&x| [x, -x]).collect();
        expected.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (got, want) in imag.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-9);
        }
        for z in ev.iter() {
            assert!(z.re.abs() < 1e-10);
        }
    }

    #[test]
    fn block_exponential_matches_generic() {
        let s = OscillatorSystem::new(&[0.8, 1.9]).unwrap();
        let t = 1.37;
        let generic = (s.a() * t).exp();
        let block = s.exp(t);
        assert!((generic - &block).amax() < 1e-12);
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        assert!((s.free_motion(&x, t) - block * &x).amax() < 1e-14);
    }

    #[test]
    fn adjoint_pair_examples() {
        let s = OscillatorSystem::new(&[1.0]).unwrap();
        let pair = adjoint_pair(&s);
        assert_eq!(pair.a(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        assert_eq!(pair.c(), &DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert!(pair.observable());

        let s2 = OscillatorSystem::new(&[1.0, 2f64.sqrt()]).unwrap();
        assert!(adjoint_pair(&s2).observable());

        let zero = ObservablePair::new(s.a().clone(), DMatrix::zeros(1, 2)).unwrap();
        assert!(!zero.observable());
    }

    #[test]
    fn observability_examples() {
        // Chain of length 2 observed through its head.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(check_observability(&a, &c), Ok(true));

        let eye = DMatrix::identity(2, 2);
        assert_eq!(check_observability(&eye, &c), Ok(false));

        let one = DMatrix::from_element(1, 1, 0.0);
        let c1 = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(check_observability(&one, &c1), Ok(true));

        let bad = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert!(matches!(
            check_observability(&eye, &bad),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn free_motion_stays_bounded() {
        let s = OscillatorSystem::new(&[0.5, 3.0]).unwrap();
        // exp(tA) is conjugate to a rotation by diag(ω, 1) per block.
        let bound = 3.0 / 0.5;
        let x = DVector::from_vec(vec![1.0, -2.0, 0.3, 0.7]);
        for k in 0..200 {
            let y = s.free_motion(&x, 0.37 * k as f64);
            assert!(y.norm() <= bound * x.norm() && y.norm() >= x.norm() / bound);
        }
    }

    #[test]
    fn rational_dependence_detection() {
        let s = OscillatorSystem::new(&[1.0, 2.0]).unwrap();
        assert_eq!(s.rational_dependence(), Some(vec![2, -1]));
        let s = OscillatorSystem::new(&[1.0, 2f64.sqrt()]).unwrap();
        assert_eq!(s.rational_dependence(), None);
        let s = OscillatorSystem::new(&[1.0, 2f64.sqrt(), 1.0 + 2f64.sqrt()]).unwrap();
        let rel = s.rational_dependence().unwrap();
        let sum: f64 = rel
            .iter()
            .zip(s.frequencies())
            .map(|(&k, &w)| k as f64 * w)
            .sum();
        assert_relative_eq!(sum, 0.0, epsilon = 1e-9);
    }
}
