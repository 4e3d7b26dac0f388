//! Host-based anomaly detection on system-call traces.
//!
//! Traces are cut into fixed-length windows, projected onto the principal
//! axes of the normal training windows (Eigentraces) and scored by a
//! one-class classifier trained against artificial data drawn from a
//! Gaussian reference distribution.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar type.

pub mod eigentraces;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod linalg;
pub mod occ;
pub mod pipeline;
pub mod scalar;
pub mod trace;
pub mod window;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type WindowMatrix64 = window::WindowMatrix<f64>;
pub type WindowMatrix32 = window::WindowMatrix<f32>;
pub type EigenModel64 = eigentraces::EigenModel<f64>;
pub type EigenModel32 = eigentraces::EigenModel<f32>;
pub type Estimator64 = estimators::Estimator<f64>;
pub type Estimator32 = estimators::Estimator<f32>;
pub type OccModel64 = occ::OccModel<f64>;
pub type OccModel32 = occ::OccModel<f32>;
pub type ModelFile64 = pipeline::ModelFile<f64>;
pub type ModelFile32 = pipeline::ModelFile<f32>;
