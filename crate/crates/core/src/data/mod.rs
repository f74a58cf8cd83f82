//! CGM time-series ingestion, selection, sampling-rate inference, weartime,
//! and synthetic data generation.
//!
//! Timestamps are naive local wall-clock times. No timezone or DST arithmetic
//! is performed anywhere in the crate.

mod ingest;
mod selection;
mod synth;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use ingest::{load_cgm_csv, parse_timestamp, write_cgm_csv, CsvSchema, LoadReport};
pub use selection::{dates_key, fmt_minute, ClockWindow, DateGroup, DateSelection, DateSet, TimeWindow};
pub use synth::{synthesize_series, SynthSpec};

/// Weartime at or above this percentage marks a window as having sufficient data.
pub const SUFFICIENT_WEARTIME_PCT: f64 = 70.0;

/// Upper bound (exclusive) for a plausible glucose reading in mg/dL.
pub const MAX_PLAUSIBLE_MG_DL: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    MissingFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not present in header")]
    MissingColumn(String),
    #[error("cannot determine {role} column; candidates: {candidates:?}")]
    AmbiguousColumns { role: &'static str, candidates: Vec<String> },
    #[error("no parseable rows ({dropped} dropped)")]
    NoRows { dropped: usize },
    #[error("need at least two readings, got {0}")]
    TooFewReadings(usize),
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("invalid synthesis spec: {0}")]
    InvalidSynthSpec(String),
    #[error("invalid time expression `{0}`")]
    InvalidTime(String),
}

/// A single sensor reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlucoseReading<T> {
    pub timestamp: NaiveDateTime,
    /// Glucose in mg/dL.
    pub value: T,
}

/// Ordered readings of one subject. Readings are strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlucoseSeries<T> {
    pub subject_id: String,
    readings: Vec<GlucoseReading<T>>,
    /// Device interval in minutes, when known up front. Overrides inference.
    pub declared_interval: Option<u32>,
}

impl<T: Scalar> GlucoseSeries<T> {
    /// Builds a series from arbitrary readings: sorts by timestamp and keeps the
    /// first occurrence of any duplicated timestamp. Returns the series and the
    /// number of duplicates discarded.
    pub fn from_unsorted(
        subject_id: impl Into<String>,
        mut readings: Vec<GlucoseReading<T>>,
    ) -> (Self, usize) {
        // stable sort keeps file order among equal timestamps, so dedup keeps the first
        readings.sort_by_key(|r| r.timestamp);
        let before = readings.len();
        readings.dedup_by_key(|r| r.timestamp);
        let dups = before - readings.len();
        (
            Self {
                subject_id: subject_id.into(),
                readings,
                declared_interval: None,
            },
            dups,
        )
    }

    /// Builds a series from readings already strictly increasing in time.
    ///
    /// Panics if the ordering invariant is violated.
    pub fn from_sorted(subject_id: impl Into<String>, readings: Vec<GlucoseReading<T>>) -> Self {
        assert!(
            readings.windows(2).all(|w| w[0].timestamp < w[1].timestamp),
            "readings must be strictly increasing in time"
        );
        Self {
            subject_id: subject_id.into(),
            readings,
            declared_interval: None,
        }
    }

    pub fn with_declared_interval(mut self, minutes: Option<u32>) -> Self {
        self.declared_interval = minutes;
        self
    }

    pub fn empty(subject_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            readings: Vec::new(),
            declared_interval: None,
        }
    }

    pub fn readings(&self) -> &[GlucoseReading<T>] {
        &self.readings
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.readings.iter().map(|r| r.value)
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.readings.first().map(|r| r.timestamp.date())
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.readings.last().map(|r| r.timestamp.date())
    }

    /// Distinct calendar dates that carry at least one reading, ascending.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut out: Vec<NaiveDate> = Vec::new();
        for r in &self.readings {
            let d = r.timestamp.date();
            if out.last() != Some(&d) {
                out.push(d);
            }
        }
        out
    }

    /// Readings falling inside a half-open datetime window.
    pub fn slice_window(&self, window: &TimeWindow) -> Self {
        let lo = self.readings.partition_point(|r| r.timestamp < window.start);
        let hi = self.readings.partition_point(|r| r.timestamp < window.end);
        Self {
            subject_id: self.subject_id.clone(),
            readings: self.readings[lo..hi].to_vec(),
            declared_interval: self.declared_interval,
        }
    }

    pub(crate) fn retain_filtered<F>(&self, keep: F) -> Self
    where
        F: Fn(&GlucoseReading<T>) -> bool,
    {
        Self {
            subject_id: self.subject_id.clone(),
            readings: self.readings.iter().copied().filter(|r| keep(r)).collect(),
            declared_interval: self.declared_interval,
        }
    }

    /// Converts the scalar type of every reading.
    pub fn cast<U: Scalar>(&self) -> GlucoseSeries<U> {
        GlucoseSeries {
            subject_id: self.subject_id.clone(),
            readings: self
                .readings
                .iter()
                .map(|r| GlucoseReading {
                    timestamp: r.timestamp,
                    value: U::lit(r.value.as_f64()),
                })
                .collect(),
            declared_interval: self.declared_interval,
        }
    }
}

/// Infers the device sampling interval in whole minutes: the median of the
/// positive gaps between consecutive readings. A declared interval wins.
pub fn estimate_sampling_rate<T: Scalar>(series: &GlucoseSeries<T>) -> Result<u32, DataError> {
    if let Some(declared) = series.declared_interval {
        return Ok(declared);
    }
    if series.len() < 2 {
        return Err(DataError::TooFewReadings(series.len()));
    }
    let mut gaps: Vec<i64> = series
        .readings
        .windows(2)
        .map(|w| (w[1].timestamp - w[0].timestamp).num_seconds())
        .filter(|&g| g > 0)
        .collect();
    gaps.sort_unstable();
    let n = gaps.len();
    let median_secs = if n % 2 == 1 {
        gaps[n / 2] as f64
    } else {
        (gaps[n / 2 - 1] + gaps[n / 2]) as f64 / 2.0
    };
    Ok(((median_secs / 60.0).round() as u32).max(1))
}

/// Keeps readings whose date is selected and whose clock time falls in the
/// selection's intraday window, if any.
pub fn filter_series<T: Scalar>(
    series: &GlucoseSeries<T>,
    selection: &DateSelection,
) -> GlucoseSeries<T> {
    let dates = selection.dates();
    series.retain_filtered(|r| {
        dates.binary_search(&r.timestamp.date()).is_ok()
            && selection.window.is_none_or(|w| w.contains(r.timestamp.time()))
    })
}

/// Weartime for one selected date (or date plus intraday window).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeartimeEntry<T> {
    pub date: NaiveDate,
    pub observed: usize,
    pub expected: T,
    pub weartime_pct: T,
    pub sufficient: bool,
}

/// Percentage of the ideal reading grid actually observed, clamped to [0, 100].
pub fn weartime_pct<T: Scalar>(observed: usize, window_minutes: u32, rate_minutes: u32) -> T {
    let expected = expected_readings::<T>(window_minutes, rate_minutes);
    if expected <= T::zero() {
        return T::zero();
    }
    let pct = T::lit(100.0) * T::from_count(observed) / expected;
    pct.max(T::zero()).min(T::lit(100.0))
}

pub fn expected_readings<T: Scalar>(window_minutes: u32, rate_minutes: u32) -> T {
    T::lit(f64::from(window_minutes)) / T::lit(f64::from(rate_minutes))
}

pub fn is_sufficient<T: Scalar>(pct: T) -> bool {
    pct >= T::lit(SUFFICIENT_WEARTIME_PCT)
}

/// Weartime per selected date, honouring the selection's intraday window.
///
/// `rate_minutes` must be positive.
pub fn compute_weartime<T: Scalar>(
    series: &GlucoseSeries<T>,
    selection: &DateSelection,
    rate_minutes: u32,
) -> Vec<WeartimeEntry<T>> {
    assert!(rate_minutes > 0, "sampling rate must be positive");
    let filtered = filter_series(series, selection);
    let window_minutes = selection.window_minutes();
    selection
        .dates()
        .into_iter()
        .map(|date| {
            let observed = filtered
                .readings
                .iter()
                .filter(|r| r.timestamp.date() == date)
                .count();
            let pct = weartime_pct::<T>(observed, window_minutes, rate_minutes);
            WeartimeEntry {
                date,
                observed,
                expected: expected_readings(window_minutes, rate_minutes),
                weartime_pct: pct,
                sufficient: is_sufficient(pct),
            }
        })
        .collect()
}
