//! Privacy-boundary question answering over continuous glucose monitor data.
//!
//! Raw readings live only in [`data`] and are touched only by the local
//! toolkit ([`metrics`], [`aggregation`]). The [`sandbox`] exposes that toolkit
//! as named tools returning aggregated payloads; the [`agent`] pipeline drives
//! the sandbox through an [`agent::LlmBackend`]. [`benchgen`] builds question
//! sets whose ground truth is produced by running the same tools, and
//! [`evaluator`] scores agent runs against it.

pub mod agent;
pub mod aggregation;
pub mod benchgen;
pub mod data;
pub mod evaluator;
pub mod fixtures;
pub mod metrics;
pub mod privacy;
pub mod sandbox;
pub mod temporal;
pub mod scalar;

pub use scalar::{Scalar, SENTINEL};

/// Series of `f64` readings, the precision used for ground truth.
pub type Series = data::GlucoseSeries<f64>;
pub type Reading = data::GlucoseReading<f64>;
pub type Thresholds = metrics::RangeThresholds<f64>;
/// Compact `f32` series for memory-constrained deployments.
pub type CompactSeries = data::GlucoseSeries<f32>;
