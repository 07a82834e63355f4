//! Geostatistical model calibration with conditional-information weights.
//!
//! Spatially clustered observations carry overlapping information about a
//! correlated process. This crate fits variograms to model residuals, turns
//! the implied covariance into per-observation calibration weights, and
//! drives weighted cost-function calibration of pluggable forward models,
//! together with the Gaussian-process simulation machinery used to study the
//! bias and precision of the resulting estimates.

pub mod calibrate;
pub mod ciweights;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod gpsim;
pub mod optimize;
pub mod spatial;
pub mod special;
pub mod variogram;

pub use error::{Error, Result};
pub use spatial::{Location, ObservationSet};
pub use variogram::{VariogramFamily, VariogramModel};
