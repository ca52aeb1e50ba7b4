//! Small numerical kernels shared by the geometry and observability modules.

use std::f64::consts::PI;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "Gauss–Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Rule on `[0, 1]` after the substitution `s ↦ s²(3 − 2s)`.
    ///
    /// The map has vanishing derivative at both ends, which turns square-root
    /// endpoint singularities into analytic integrands.
    pub fn smoothed_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
        let rule = Self::new(n);
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let s = 0.5 * (x + 1.0);
            nodes.push(s * s * (3.0 - 2.0 * s));
            weights.push(0.5 * w * 6.0 * s * (1.0 - s));
        }
        (nodes, weights)
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite trapezoid on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            dt * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Finite-difference weights for the `order`-th derivative at `z` from the
/// stencil `xs` (Fornberg's recursion).
pub fn fornberg_weights(z: f64, xs: &[f64], order: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(n > order, "stencil too small for derivative order");
    // c[j][k]: weight of node j for derivative k.
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Weight tables for differentiating uniformly sampled data.
///
/// Uses `order + accuracy` consecutive samples, centred where the grid allows
/// and shifted towards the interior near the ends.
#[derive(Debug, Clone)]
pub struct UniformDerivative {
    order: usize,
    width: usize,
    /// `tables[o]` holds the weights when the target sits at stencil offset `o`.
    tables: Vec<Vec<f64>>,
}

impl UniformDerivative {
    pub fn new(order: usize, accuracy: usize) -> Self {
        let mut width = order + accuracy;
        // Symmetric stencils need an odd width.
        if width.is_multiple_of(2) {
            width += 1;
        }
        let xs: Vec<f64> = (0..width).map(|i| i as f64).collect();
        let tables = (0..width)
            .map(|o| fornberg_weights(o as f64, &xs, order))
            .collect();
        Self {
            order,
            width,
            tables,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Derivative of `values` at every sample, grid spacing `dt`.
    pub fn apply(&self, values: &[f64], dt: f64) -> Vec<f64> {
        let n = values.len();
        assert!(n >= self.width, "not enough samples for the stencil");
        let half = self.width / 2;
        let scale = dt.powi(self.order as i32);
        (0..n)
            .map(|i| {
                let start = i.saturating_sub(half).min(n - self.width);
                let w = &self.tables[i - start];
                let s: f64 = w
                    .iter()
                    .zip(&values[start..start + self.width])
                    .map(|(a, b)| a * b)
                    .sum();
                s / scale
            })
            .collect()
    }
}
