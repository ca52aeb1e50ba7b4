//! The four experiments. Each validates its own `parameters` record.

pub mod brunovsky;
pub mod decay;
pub mod estimate;
pub mod geometry;

pub use brunovsky::run_brunovsky_suite;
pub use decay::run_decay_experiment;
pub use estimate::run_estimate_experiment;
pub use geometry::run_geometry_suite;
