//! Spatial growth-and-reallocation models: discretization, simulation and
//! estimation of the reduced-form spatial regression.

pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod gfdm;
pub mod kernels;
pub mod linalg;
pub mod optim;
pub mod particles;
pub mod sim;
pub mod sparse;

pub use error::{Result, SardError};
