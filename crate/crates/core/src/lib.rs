//! Driver-aware PHEV trip simulation and conformal prediction intervals for
//! trip-level equivalent fuel consumption.
//!
//! The simulation, regression and conformal modules are generic over
//! [`Real`]; the aliases below fix the scalar to `f64`. Copula fitting,
//! calibration, file formats and the pipeline work in `f64` only.

// NaN-rejecting guards are written as `!(x > 0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod conformal;
pub mod edm;
pub mod eval;
pub mod error;
pub mod gbdt;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod plant;
pub mod scalar;
pub mod seed;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type DriverParams = edm::DriverParams<f64>;
pub type RouteSegment = edm::RouteSegment<f64>;
pub type Route = edm::Route<f64>;
pub type DriverConstants = edm::DriverConstants<f64>;
pub type Trajectory = edm::Trajectory<f64>;
pub type PlantParams = plant::PlantParams<f64>;
pub type EnergyResult = plant::EnergyResult<f64>;
pub type Features = model::Features<f64>;
pub type QuantileEnsemble = gbdt::QuantileEnsemble<f64>;
pub use gbdt::Hyperparams;
