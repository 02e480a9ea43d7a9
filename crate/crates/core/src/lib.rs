//! Gaussian moment dynamics of a harmonic oscillator whose position and
//! momentum are continuously monitored by inefficient detectors.
//!
//! The conditional state is fully described by a phase-space mean and a 2×2
//! covariance. The covariance obeys a deterministic Riccati equation with a
//! closed-form stationary point and transient; the mean is driven by the
//! measurement innovations.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod linalg2;
pub mod model;
pub mod output;
pub mod steady_state;
pub mod sweep;
pub mod trajectories;

pub mod cli;

pub use error::{Error, Result};
pub use linalg2::{Mat2, SymMat2, Vec2};
pub use model::{
    build_system_matrices, greek_params, strengths_from_coords, DetectorConfig, Efficiencies,
    GreekParams, OscillatorParams, ParamSet, StrengthCoords, SystemMatrices,
};
pub use steady_state::{steady_state_covariance, SteadyStateSolution};

/// Crate version embedded in output metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
