//! The limit body Ω of the scaled reachable sets: its support function
//! `H_Ω`, the gauge `ρ` dual to it, and the momentum `p = ∂ρ/∂x`.
//!
//! For the block-oscillator system, `⟨exp(tA)B, p⟩ = Σ_j r_j(p) cos(ω_j t − φ_j(p))`
//! with per-block amplitudes `r_j = √(p_{2j}²/ω_j² + p_{2j+1}²)`, so the
//! long-time average of its absolute value is a torus average that depends
//! on the amplitudes only. Everything here works in that reduced amplitude
//! space and lifts back to `ℝ^N` through the block phases.

mod gauge;
mod support;
mod torus;

use thiserror::Error;

pub use gauge::{GaugeNorm, Momentum, SolverSettings};
pub use support::{SupportFunction, SupportGradient};
pub use torus::{QuadratureSpec, TorusAverage, TorusQuadrature, DEGENERATE_AMPLITUDE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("torus quadrature did not converge with {nodes} nodes per piece")]
    QuadratureNotConverged { nodes: usize },
    #[error("momentum solve did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverNotConverged { residual: f64, iterations: usize },
    #[error("covector is zero")]
    ZeroCovector,
    #[error("state is zero")]
    ZeroState,
    #[error("input contains non-finite entries")]
    NonFinite,
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}
