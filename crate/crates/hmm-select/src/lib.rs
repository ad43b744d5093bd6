//! Nonparametric estimation of hidden Markov model emission densities with
//! per-state adaptive model selection.
//!
//! The pipeline works on a nested family of orthonormal basis expansions
//! ("models") of the observation space:
//!
//! 1. [`bases`] defines the basis families, coefficient-space geometry and
//!    ground-truth projections;
//! 2. [`moments`] accumulates the empirical moment tensors of consecutive
//!    observation triples in a single streaming pass;
//! 3. [`spectral`] and [`leastsq`] turn those tensors into per-model
//!    estimates of the emission coefficients, the initial distribution and
//!    the transition matrix;
//! 4. [`selection`] aligns hidden-state labels across models and selects a
//!    separate model dimension for every state by comparing estimators at
//!    different scales against a penalty;
//! 5. [`calibration`] calibrates the penalty constant from the dimension
//!    jump of the selected complexity.
//!
//! [`simulation`] provides ground-truth samplers, error metrics, and
//! convergence-rate regression; [`crossval`] is a blocked cross-validation
//! baseline that selects a single common model; [`diagnostics`] numerically
//! checks the nondegeneracy of the parametrization at a given parameter
//! point. [`schema`] holds the JSON/CSV file formats used by the CLI.

pub mod bases;
pub mod calibration;
pub mod cli;
pub mod crossval;
pub mod diagnostics;
mod error;
pub mod leastsq;
mod linalg;
pub mod moments;
mod quad;
pub mod schema;
pub mod selection;
pub mod simulation;
pub mod spectral;

pub use cli::run;
pub use error::{Error, Result};
