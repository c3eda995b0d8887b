//! Training-time calibration toolkit for radar spectra classifiers.
//!
//! The crate is organised along the data flow of an experiment:
//!
//! - [`synth`] generates synthetic range-azimuth ROI power spectra, computes
//!   training-split statistics and applies corruption transforms.
//! - [`labels`] turns hard labels into soft training targets with fixed,
//!   range-based or power-based smoothing factors.
//! - [`classifier`] is a small MLP trained with soft-target cross-entropy.
//! - [`calibration`] computes accuracy, equal-mass ECE, MMC and reliability
//!   tables from prediction records.
//! - [`experiment`] orchestrates multi-seed runs, range studies and corruption
//!   sweeps and aggregates their results; the `radcal` binary is a thin CLI
//!   over it.

pub mod calibration;
pub mod classifier;
pub mod error;
pub mod experiment;
pub mod labels;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
