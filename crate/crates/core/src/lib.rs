//! Cooperative distributed detection for wireless sensor networks whose
//! sensors observe spatially correlated Gaussian data.
//!
//! The crate covers the whole pipeline:
//!
//! * [`model`]: the Gaussian mean-shift test, Toeplitz covariances and
//!   reproducible sampling of observation blocks.
//! * [`network`]: random geometric sensor networks and local-degree
//!   consensus weights.
//! * [`consensus`]: synchronous average consensus and the network-wide
//!   spatial sum, with a per-node broadcast ledger.
//! * [`estimators`]: local and global maximum-likelihood estimates.
//! * [`detectors`]: the centralized GLR statistic and the marginal-product
//!   statistic (centralized and distributed), for known and unknown
//!   covariance.
//! * [`asymptotics`]: generalized chi-square laws of the statistics,
//!   evaluated with the Lugannani–Rice saddlepoint approximation, and
//!   deflection coefficients.
//! * [`experiments`]: Monte Carlo CROC curves, deflection sweeps, estimator
//!   covariance validation and the energy comparison.
//! * [`config`]: the flat `key=value` experiment configuration format.

// Negated comparisons below reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod config;
pub mod consensus;
pub mod detectors;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod model;
pub mod network;
pub mod rng;

pub use error::{Error, ErrorCategory, Result};
pub use model::{GaussianMeanModel, Hypothesis, NullModel, ObservationBlock};
pub use network::SensorNetwork;
