//! Matched cluster-level instrumental-variable designs.
//!
//! The crate covers the full workflow for observational data in which a
//! continuous cluster-level instrument (an "encouragement dose") is embedded
//! into a matched-pair cluster-randomized encouragement experiment:
//!
//! - [`data`]: ingestion, aggregation and validation of matched-pair cluster data.
//! - [`matching`]: rank-based robust Mahalanobis distances, dose penalties, sinks,
//!   exact minimum-weight perfect matching and balance diagnostics.
//! - [`sharp`]: the double-rank statistic family for the cluster-level sharp null
//!   and the constant proportional effect model.
//! - [`design`] and [`per`]: regression-assisted variance estimation and inference
//!   for the pooled effect ratio.
//! - [`acer`]: inference for the average cluster effect ratio, driven by the
//!   branch-and-bound solver in [`miqcp`].
//! - [`sim`]: synthetic data generators and simulation experiments.

// Checks such as `!(x > 0.0)` are written to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acer;
pub mod data;
pub mod design;
pub mod error;
pub mod grid;
pub mod matching;
pub mod miqcp;
pub mod per;
pub mod sharp;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
