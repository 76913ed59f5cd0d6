//! Multi-task gradient balancing.
//!
//! The crate implements scale-invariant multi-task training (a logarithmic
//! loss transform combined with EMA-smoothed, max-norm gradient
//! normalization) together with a handful of comparison balancers, the
//! synthetic task suites they are exercised on, and the numerical checks
//! around them: Pareto-front enumeration, the IMTL-L inner minimization and
//! the Δp overall metric.

pub mod balancers;
pub mod error;
pub mod metrics;
pub mod pareto;
pub mod tasks;
pub mod trainer;
pub mod transforms;
pub mod vec_math;

pub use error::{Error, Result};
pub use vec_math::RealVector;
