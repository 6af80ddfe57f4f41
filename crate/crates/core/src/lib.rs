//! Distorted Brownian motion on a space with varying dimension: R^3 glued
//! to a half-line at the origin.

pub mod analytic;
pub mod error;
pub mod model;
pub mod parametrix;
pub mod quad;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
pub use model::{BranchPoint, ModelParams, RhoProfile};
