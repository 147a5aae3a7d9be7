//! Monotone integrated spatial process (MISP) models for snow density.
//!
//! The crate fits a hierarchical Bayesian model in which the logit of snow
//! density (scaled by the density of ice) is a spatially varying intercept plus
//! a nonnegative combination of integrated kernels in depth. Coefficients are
//! log-Gaussian processes over sites, so every fitted or interpolated curve is
//! monotone in depth and bounded by the density of ice.
//!
//! Layout:
//!
//! - [`basis`]: M-/I-spline and CDF-difference kernel design rows.
//! - [`geodesy`]: great-circle and chordal distances, Matérn correlations.
//! - [`model`]: data types, the log-posterior and its gradient.
//! - [`inference`]: static HMC with warmup adaptation, R-hat and ESS.
//! - [`predict`]: kriging of latent fields and posterior-predictive curves.
//! - [`scoring`]: CRPS, integrated errors and grouped cross-validation.
//! - [`simulate`]: prior draws and synthetic datasets.
//! - [`io`]: CSV formats and the run configuration file.

// `!(x > 0.0)` deliberately rejects NaN alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod geodesy;
pub mod inference;
pub mod io;
pub mod model;
pub mod predict;
pub mod rng;
pub mod scoring;
pub mod simulate;
pub mod special;

pub use error::{MispError, Result};
