//! Torus average `G(r) = E_θ |Σ_j r_j cos θ_j|` over independent uniform
//! phases, together with its gradient in `r`.
//!
//! The phase of the largest amplitude is integrated in closed form. Each
//! remaining phase is integrated over `[0, π]` (the integrand is even in every
//! angle) by Gauss–Legendre on the pieces between the kinks of the partially
//! integrated function, which are known in closed form: after integrating
//! the amplitudes `r_1..r_k` the function of the offset `c` is analytic away
//! from `c ∈ {±r_1 ± ... ± r_k}`.

use std::f64::consts::{FRAC_2_PI, PI};

use crate::numerics::GaussLegendre;

use super::GeometryError;

/// Amplitudes below this fraction of the largest one are treated as zero.
pub const DEGENERATE_AMPLITUDE: f64 = 1e-12;

/// Quadrature descriptor for the torus average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Gauss nodes per smooth piece at the first refinement level.
    pub nodes: usize,
    /// Relative change between successive levels accepted as converged.
    pub tolerance: f64,
    /// Largest node count per piece before giving up.
    pub max_nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes: 16,
            tolerance: 1e-9,
            max_nodes: 512,
        }
    }
}

/// Value and gradient of the torus average at one amplitude vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusAverage {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Some amplitude was at or below the degeneracy floor.
    pub degenerate: bool,
    /// Nodes per piece at the accepted level.
    pub nodes: usize,
}

#[derive(Debug, Clone)]
struct Level {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TorusQuadrature {
    spec: QuadratureSpec,
    levels: Vec<Level>,
}

impl TorusQuadrature {
    pub fn new(spec: QuadratureSpec) -> Self {
        assert!(spec.nodes >= 2, "need at least two nodes per piece");
        let mut levels = Vec::new();
        let mut n = spec.nodes;
        while n <= spec.max_nodes.max(spec.nodes) {
            let (nodes, weights) = GaussLegendre::smoothed_unit(n);
            levels.push(Level { nodes, weights });
            n *= 2;
        }
        Self { spec, levels }
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    /// `G(r)` and `∂G/∂r`. Negative entries are treated by absolute value
    /// (the average is even in each amplitude) and their gradient sign-flipped.
    pub fn evaluate(&self, amplitudes: &[f64]) -> Result<TorusAverage, GeometryError> {
        let d = amplitudes.len();
        let rmax = amplitudes.iter().map(|r| r.abs()).fold(0.0, f64::max);
        let mut gradient = vec![0.0; d];
        if rmax == 0.0 {
            return Ok(TorusAverage {
                value: 0.0,
                gradient,
                degenerate: false,
                nodes: 0,
            });
        }
        if !rmax.is_finite() {
            return Err(GeometryError::NonFinite);
        }

        let floor = DEGENERATE_AMPLITUDE * rmax;
        let mut active: Vec<usize> = (0..d).filter(|&j| amplitudes[j].abs() > floor).collect();
        let degenerate = active.len() < d;
        active.sort_by(|&i, &j| amplitudes[j].abs().total_cmp(&amplitudes[i].abs()).then(i.cmp(&j)));

        let lead = amplitudes[active[0]].abs();
        let rest: Vec<f64> = active[1..].iter().map(|&j| amplitudes[j].abs()).collect();
        let problem = Problem::new(lead, rest);

        let scale: f64 = active.iter().map(|&j| amplitudes[j].abs()).sum();
        let (acc, nodes) = if problem.rest.is_empty() {
            (problem.integrate(&self.levels[0]), 0)
        } else {
            let mut prev = problem.integrate(&self.levels[0]);
            let mut accepted = None;
            for (k, level) in self.levels.iter().enumerate().skip(1) {
                let next = problem.integrate(level);
                if (next[0] - prev[0]).abs() <= self.spec.tolerance * scale {
                    accepted = Some((next, self.spec.nodes << k));
                    break;
                }
                prev = next;
            }
            match accepted {
                Some(found) => found,
                None => {
                    return Err(GeometryError::QuadratureNotConverged {
                        nodes: self.spec.nodes << (self.levels.len() - 1),
                    })
                }
            }
        };

        gradient[active[0]] = acc[1] * amplitudes[active[0]].signum();
        for (slot, &j) in active[1..].iter().enumerate() {
            gradient[j] = acc[2 + slot] * amplitudes[j].signum();
        }
        Ok(TorusAverage {
            value: acc[0],
            gradient,
            degenerate,
            nodes,
        })
    }
}

/// One evaluation: closed-form phase `lead`, quadrature over `rest`
/// (descending, innermost first).
struct Problem {
    lead: f64,
    rest: Vec<f64>,
    /// `kinks[k]`: singular offsets after integrating `lead` and `rest[..k]`.
    kinks: Vec<Vec<f64>>,
}

impl Problem {
    fn new(lead: f64, rest: Vec<f64>) -> Self {
        let mut kinks = Vec::with_capacity(rest.len());
        let mut set = vec![-lead, lead];
        for &r in &rest {
            kinks.push(set.clone());
            let mut next = Vec::with_capacity(2 * set.len());
            for &s in &set {
                next.push(s - r);
                next.push(s + r);
            }
            next.sort_by(f64::total_cmp);
            next.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * lead);
            set = next;
        }
        Self { lead, rest, kinks }
    }

    /// Returns `[G, ∂G/∂lead, ∂G/∂rest_0, ...]`.
    fn integrate(&self, level: &Level) -> Vec<f64> {
        let m = self.rest.len();
        let mut acc = vec![0.0; 2 + m];
        let mut cosines = vec![0.0; m];
        self.integrate_dim(m, 0.0, 1.0, &mut cosines, level, &mut acc);
        acc
    }

    fn integrate_dim(
        &self,
        k: usize,
        offset: f64,
        weight: f64,
        cosines: &mut [f64],
        level: &Level,
        acc: &mut [f64],
    ) {
        if k == 0 {
            let (f, f_r, f_c) = closed_form(self.lead, offset);
            acc[0] += weight * f;
            acc[1] += weight * f_r;
            for (slot, &cs) in cosines.iter().enumerate() {
                acc[2 + slot] += weight * f_c * cs;
            }
            return;
        }
        let r = self.rest[k - 1];
        let mut cuts = vec![0.0];
        for &s in &self.kinks[k - 1] {
            let arg = (s - offset) / r;
            if arg > -1.0 && arg < 1.0 {
                cuts.push(arg.acos());
            }
        }
        cuts.push(PI);
        cuts.sort_by(f64::total_cmp);

        for piece in cuts.windows(2) {
            let (lo, hi) = (piece[0], piece[1]);
            let width = hi - lo;
            if width <= 0.0 {
                continue;
            }
            for (&s, &w) in level.nodes.iter().zip(&level.weights) {
                let theta = lo + width * s;
                let cs = theta.cos();
                cosines[k - 1] = cs;
                self.integrate_dim(
                    k - 1,
                    offset + r * cs,
                    weight * w * width / PI,
                    cosines,
                    level,
                    acc,
                );
            }
        }
    }
}

/// `F(r, c) = (1/2π) ∫ |r cos θ + c| dθ` with `∂F/∂r` and `∂F/∂c`.
fn closed_form(r: f64, c: f64) -> (f64, f64, f64) {
    if c.abs() >= r {
        return (c.abs(), 0.0, c.signum());
    }
    let z = -c / r;
    let theta0 = z.acos();
    let sin0 = (1.0 - z * z).max(0.0).sqrt();
    let f = FRAC_2_PI * (r * sin0 + c * theta0) - c;
    (f, FRAC_2_PI * sin0, FRAC_2_PI * theta0 - 1.0)
}
