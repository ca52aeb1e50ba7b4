//! Asymptotically time-optimal damping of linear oscillators driven by one
//! bounded scalar control, and the perturbed-observability tools used to
//! check that the damping proceeds at a positive speed.

// `!(x <= tol)` is deliberate: a NaN residual must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod geometry;
pub mod model;
pub mod numerics;
pub mod observability;

pub use model::{adjoint_pair, check_observability, ModelError, ObservablePair, OscillatorSystem};
