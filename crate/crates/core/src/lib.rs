//! Similarity learning for labeled multivariate time series (MTS) with
//! missing data.
//!
//! The crate is organised along the pipeline:
//!
//! * [`data`]: the MTS data model, CSV ingestion, window alignment,
//!   stratified splitting and class balancing.
//! * [`synth`]: synthetic MTS cohorts with known cluster structure.
//! * [`tck`]: the time-series cluster kernel, an ensemble of
//!   diagonal-covariance Gaussian mixtures fitted with MAP-EM on random
//!   record/attribute/time subsets.
//! * [`dimred`]: PCA and kernel PCA.
//! * [`nn`] and [`autoenc`]: a small fully-connected network core and the
//!   autoencoder built on it.
//! * [`embed`]: exact t-SNE and cohort summaries.
//! * [`classify`]: seven classifiers, metrics, cross-validation and
//!   report tables.

#![allow(clippy::needless_range_loop)]

pub mod autoenc;
pub mod classify;
pub mod data;
pub mod dimred;
pub mod embed;
mod error;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tck;

pub use error::{Error, Result};
