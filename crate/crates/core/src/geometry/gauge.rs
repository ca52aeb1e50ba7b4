use nalgebra::{DMatrix, DVector};

use crate::model::OscillatorSystem;

use super::support::SupportFunction;
use super::torus::{QuadratureSpec, DEGENERATE_AMPLITUDE};
use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Accepted `‖x − T∇H_Ω(p)‖ / ‖x‖`.
    pub residual_tolerance: f64,
    /// Newton stops early once the residual is below this.
    pub target_residual: f64,
    /// Step for the finite-difference Hessian in amplitude space.
    pub hessian_step: f64,
    /// Relative step for `gauge_hessian_apply`.
    pub gradient_step: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            residual_tolerance: 1e-8,
            target_residual: 1e-13,
            hessian_step: 1e-6,
            gradient_step: 1e-5,
        }
    }
}

/// Solution of `x = T ∇H_Ω(p)` with `H_Ω(p) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    pub p: DVector<f64>,
    /// `T = ρ(x) = ⟨p, x⟩`.
    pub gauge: f64,
    /// Block amplitudes of `p`, reused to warm-start nearby solves.
    pub amplitudes: Vec<f64>,
    /// `‖x − T∇H_Ω(p)‖ / ‖x‖` at the returned point.
    pub residual: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

/// The gauge `ρ(x) = max{⟨p, x⟩ : H_Ω(p) ≤ 1}` of the limit body.
#[derive(Debug, Clone)]
pub struct GaugeNorm {
    support: SupportFunction,
    settings: SolverSettings,
}

impl GaugeNorm {
    pub fn new(support: SupportFunction, settings: SolverSettings) -> Self {
        Self { support, settings }
    }

    pub fn with_defaults(system: &OscillatorSystem) -> Self {
        Self::new(
            SupportFunction::new(system, QuadratureSpec::default()),
            SolverSettings::default(),
        )
    }

    pub fn support(&self) -> &SupportFunction {
        &self.support
    }

    pub fn system(&self) -> &OscillatorSystem {
        self.support.system()
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn gauge(&self, x: &DVector<f64>) -> Result<f64, GeometryError> {
        self.check(x)?;
        if x.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        Ok(self.solve_momentum(x)?.gauge)
    }

    /// `∂ρ/∂x`, which coincides with the momentum `p`.
    pub fn gauge_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        Ok(self.solve_momentum(x)?.p)
    }

    /// `(∂²ρ/∂x²)(x) · v` by central differences of the gradient.
    pub fn gauge_hessian_apply(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>, GeometryError> {
        self.check(v)?;
        let center = self.solve_momentum(x)?;
        self.hessian_apply_from(x, v, &center)
    }

    /// As [`gauge_hessian_apply`](Self::gauge_hessian_apply), reusing a known
    /// momentum at `x` as the warm start.
    pub fn hessian_apply_from(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        center: &Momentum,
    ) -> Result<DVector<f64>, GeometryError> {
        let vnorm = v.norm();
        if vnorm == 0.0 {
            return Ok(DVector::zeros(x.len()));
        }
        let h = self.settings.gradient_step * x.norm();
        let dir = v / vnorm;
        let plus = self.solve_momentum_from(&(x + &dir * h), Some(center))?;
        let minus = self.solve_momentum_from(&(x - &dir * h), Some(center))?;
        Ok((plus.p - minus.p) * (vnorm / (2.0 * h)))
    }

    pub fn solve_momentum(&self, x: &DVector<f64>) -> Result<Momentum, GeometryError> {
        self.solve_momentum_from(x, None)
    }

    fn check(&self, x: &DVector<f64>) -> Result<(), GeometryError> {
        let n = self.system().dim();
        if x.len() != n {
            return Err(GeometryError::DimensionMismatch {
                got: x.len(),
                expected: n,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(())
    }

    /// Solves `x = T∇H_Ω(p)`, optionally warm-started from a nearby solution.
    ///
    /// The phase of each block of `p` is fixed by `x`, so only the amplitude
    /// vector `r` is unknown: it minimises the torus average `G` on the
    /// hyperplane `⟨r, s⟩ = 1`, where `s_j = |(ω_j x_{2j}, x_{2j+1})|`.
    pub fn solve_momentum_from(
        &self,
        x: &DVector<f64>,
        warm: Option<&Momentum>,
    ) -> Result<Momentum, GeometryError> {
        self.check(x)?;
        let xnorm = x.norm();
        if xnorm == 0.0 {
            return Err(GeometryError::ZeroState);
        }
        let freqs = self.system().frequencies();
        let d = freqs.len();
        let s: Vec<f64> = freqs
            .iter()
            .enumerate()
            .map(|(j, &w)| (w * x[2 * j]).hypot(x[2 * j + 1]))
            .collect();
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let active: Vec<usize> = (0..d).filter(|&j| s[j] > DEGENERATE_AMPLITUDE * smax).collect();
        let s_act: Vec<f64> = active.iter().map(|&j| s[j]).collect();
        let warm_act = warm.map(|m| active.iter().map(|&j| m.amplitudes[j]).collect::<Vec<_>>());

        let solved = self.minimize_on_hyperplane(&s_act, warm_act.as_deref())?;

        let mut amplitudes = vec![0.0; d];
        let mut p = DVector::zeros(x.len());
        let mut fitted = DVector::zeros(x.len());
        for (slot, &j) in active.iter().enumerate() {
            let r = solved.u[slot] / solved.value;
            amplitudes[j] = r;
            let w = freqs[j];
            p[2 * j] = r * w * w * x[2 * j] / s[j];
            p[2 * j + 1] = r * x[2 * j + 1] / s[j];
            let scale = solved.gauge * solved.gradient[slot] / s[j];
            fitted[2 * j] = scale * x[2 * j];
            fitted[2 * j + 1] = scale * x[2 * j + 1];
        }
        let residual = (x - &fitted).norm() / xnorm;
        if !(residual <= self.settings.residual_tolerance) {
            return Err(GeometryError::SolverNotConverged {
                residual,
                iterations: solved.iterations,
            });
        }
        Ok(Momentum {
            p,
            gauge: solved.gauge,
            amplitudes,
            residual,
            iterations: solved.iterations,
            degenerate: active.len() < d,
        })
    }

    fn minimize_on_hyperplane(
        &self,
        s: &[f64],
        warm: Option<&[f64]>,
    ) -> Result<HyperplaneSolution, GeometryError> {
        let k = s.len();
        let snorm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let shat = DVector::from_iterator(k, s.iter().map(|v| v / snorm));
        let basis = orthogonal_complement(&shat);
        let quad = self.support.quadrature();

        let eval = |w: &DVector<f64>| -> Result<(DVector<f64>, f64, DVector<f64>), GeometryError> {
            let u = &shat + &basis * w;
            let avg = quad.evaluate(u.as_slice())?;
            Ok((u, avg.value, DVector::from_vec(avg.gradient)))
        };
        // Relative residual of s = T∇G(u) with T = |s|/G(u); equals ‖ŝ − ∇G/G‖.
        let residual_of = |g: f64, grad: &DVector<f64>| (&shat - grad / g).norm();

        let mut w = DVector::zeros(k.saturating_sub(1));
        if let Some(prev) = warm {
            let dot: f64 = prev.iter().zip(shat.iter()).map(|(a, b)| a * b).sum();
            if dot > 0.0 && k > 1 {
                let u0 = DVector::from_iterator(k, prev.iter().map(|v| v / dot));
                w = basis.transpose() * (u0 - &shat);
            }
        }

        let (mut u, mut g, mut grad) = eval(&w)?;
        let mut iterations = 0;
        let mut res = residual_of(g, &grad);
        while k > 1 && res > self.settings.target_residual && iterations < self.settings.max_iterations {
            iterations += 1;
            let gw = basis.transpose() * &grad;
            let hess = self.reduced_hessian(&w, &shat, &basis)?;
            let mut step = newton_direction(&hess, &gw).unwrap_or_else(|| -&gw);
            let predicted = gw.dot(&step);
            if predicted >= 0.0 {
                step = -&gw;
            }
            let predicted = gw.dot(&step);

            // Below the resolution of G the Armijo test is meaningless.
            let mut t = 1.0;
            let mut accepted = None;
            if predicted.abs() < 1e-13 * g {
                accepted = Some(eval(&(&w + &step))?);
            } else {
                while t > 1e-12 {
                    let trial_w = &w + &step * t;
                    let trial = eval(&trial_w)?;
                    if trial.1 <= g + 1e-4 * t * predicted {
                        accepted = Some(trial);
                        break;
                    }
                    t *= 0.5;
                }
            }
            match accepted {
                Some((nu, ng, ngrad)) => {
                    w += &step * t;
                    u = nu;
                    g = ng;
                    grad = ngrad;
                    res = residual_of(g, &grad);
                }
                None => break,
            }
        }
        if !(res <= self.settings.residual_tolerance) {
            return Err(GeometryError::SolverNotConverged {
                residual: res,
                iterations,
            });
        }
        Ok(HyperplaneSolution {
            gauge: snorm / g,
            value: g,
            gradient: grad.as_slice().to_vec(),
            u: u.as_slice().to_vec(),
            iterations,
        })
    }

    fn reduced_hessian(
        &self,
        w: &DVector<f64>,
        shat: &DVector<f64>,
        basis: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>, GeometryError> {
        let m = w.len();
        let h = self.settings.hessian_step;
        let quad = self.support.quadrature();
        let grad_at = |w: &DVector<f64>| -> Result<DVector<f64>, GeometryError> {
            let u = shat + basis * w;
            let avg = quad.evaluate(u.as_slice())?;
            Ok(basis.transpose() * DVector::from_vec(avg.gradient))
        };
        let mut hess = DMatrix::zeros(m, m);
        for i in 0..m {
            let mut up = w.clone();
            up[i] += h;
            let mut dn = w.clone();
            dn[i] -= h;
            let col = (grad_at(&up)? - grad_at(&dn)?) / (2.0 * h);
            hess.set_column(i, &col);
        }
        Ok((&hess + hess.transpose()) * 0.5)
    }
}

struct HyperplaneSolution {
    gauge: f64,
    /// `G(u)` at the minimiser.
    value: f64,
    gradient: Vec<f64>,
    u: Vec<f64>,
    iterations: usize,
}

/// Newton step with Levenberg damping until the Cholesky factorisation succeeds.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let m = hess.nrows();
    let scale = hess.diagonal().amax().max(1e-300);
    let mut mu = 0.0;
    for _ in 0..30 {
        let shifted = hess + DMatrix::identity(m, m) * mu;
        if let Some(chol) = shifted.cholesky() {
            return Some(-chol.solve(grad));
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 10.0 };
    }
    None
}

/// Orthonormal basis of the complement of a unit vector (Householder).
fn orthogonal_complement(unit: &DVector<f64>) -> DMatrix<f64> {
    let k = unit.len();
    if k <= 1 {
        return DMatrix::zeros(k, 0);
    }
    let mut v = unit.clone();
    let sign = if unit[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign;
    let vv = v.dot(&v);
    let reflector = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    reflector.columns(1, k - 1).into_owned()
}
