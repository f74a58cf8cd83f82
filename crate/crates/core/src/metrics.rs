//! Per-day clinical glycemic metrics.
//!
//! Conventions: the target range is inclusive (`low <= v <= high`), events use
//! strict inequalities, standard deviation is the population form, and any
//! metric over zero readings is the `-1` sentinel.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DateSelection, GlucoseSeries};
use crate::scalar::{Scalar, SENTINEL};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid thresholds: low {low} must be positive and below high {high}")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeThresholds<T> {
    pub low: T,
    pub high: T,
}

impl<T: Scalar> RangeThresholds<T> {
    pub fn new(low: T, high: T) -> Result<Self, MetricsError> {
        if !(low > T::zero() && low < high) {
            return Err(MetricsError::InvalidThresholds {
                low: low.as_f64(),
                high: high.as_f64(),
            });
        }
        Ok(Self { low, high })
    }
}

impl<T: Scalar> Default for RangeThresholds<T> {
    fn default() -> Self {
        Self {
            low: T::lit(70.0),
            high: T::lit(180.0),
        }
    }
}

/// Linear clinical transforms of mean glucose. Defaults are the ADAG
/// estimated-A1c regression and the GMI formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClinicalConstants {
    pub a1c_offset: f64,
    pub a1c_divisor: f64,
    pub gmi_intercept: f64,
    pub gmi_slope: f64,
}

impl Default for ClinicalConstants {
    fn default() -> Self {
        Self {
            a1c_offset: 46.7,
            a1c_divisor: 28.7,
            gmi_intercept: 3.31,
            gmi_slope: 0.02392,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeStats<T> {
    pub tir_pct: T,
    pub tbr_pct: T,
    pub tar_pct: T,
    pub tir_minutes: T,
    pub tbr_minutes: T,
    pub tar_minutes: T,
}

impl<T: Scalar> RangeStats<T> {
    fn sentinel() -> Self {
        let s = T::sentinel();
        Self {
            tir_pct: s,
            tbr_pct: s,
            tar_pct: s,
            tir_minutes: s,
            tbr_minutes: s,
            tar_minutes: s,
        }
    }
}

/// Percentage and duration below, within and above range.
pub fn time_in_ranges<T: Scalar>(
    series: &GlucoseSeries<T>,
    thresholds: &RangeThresholds<T>,
    rate_minutes: u32,
) -> RangeStats<T> {
    if series.is_empty() {
        return RangeStats::sentinel();
    }
    let (mut below, mut within, mut above) = (0usize, 0usize, 0usize);
    for v in series.values() {
        if v < thresholds.low {
            below += 1;
        } else if v > thresholds.high {
            above += 1;
        } else {
            within += 1;
        }
    }
    let total = T::from_count(series.len());
    let pct = |n: usize| T::from_count(n) / total * T::lit(100.0);
    let rate = T::lit(f64::from(rate_minutes));
    let minutes = |n: usize| T::from_count(n) * rate;
    RangeStats {
        tir_pct: pct(within),
        tbr_pct: pct(below),
        tar_pct: pct(above),
        tir_minutes: minutes(within),
        tbr_minutes: minutes(below),
        tar_minutes: minutes(above),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats<T> {
    pub mean: T,
    pub std: T,
    pub cv_pct: T,
    pub est_a1c_pct: T,
    pub gmi_pct: T,
}

pub fn summary_stats<T: Scalar>(series: &GlucoseSeries<T>) -> SummaryStats<T> {
    summary_stats_with(series, &ClinicalConstants::default())
}

pub fn summary_stats_with<T: Scalar>(
    series: &GlucoseSeries<T>,
    constants: &ClinicalConstants,
) -> SummaryStats<T> {
    if series.is_empty() {
        let s = T::sentinel();
        return SummaryStats {
            mean: s,
            std: s,
            cv_pct: s,
            est_a1c_pct: s,
            gmi_pct: s,
        };
    }
    let n = T::from_count(series.len());
    let mean = series.values().fold(T::zero(), |acc, v| acc + v) / n;
    let var = series
        .values()
        .fold(T::zero(), |acc, v| acc + (v - mean) * (v - mean))
        / n;
    let std = var.sqrt();
    let cv_pct = if mean > T::zero() {
        T::lit(100.0) * std / mean
    } else {
        T::sentinel()
    };
    SummaryStats {
        mean,
        std,
        cv_pct,
        est_a1c_pct: (mean + T::lit(constants.a1c_offset)) / T::lit(constants.a1c_divisor),
        gmi_pct: T::lit(constants.gmi_intercept) + T::lit(constants.gmi_slope) * mean,
    }
}

/// Minimum and maximum reading, or `(-1, -1)` for an empty series.
pub fn min_max<T: Scalar>(series: &GlucoseSeries<T>) -> (T, T) {
    series
        .values()
        .fold(None, |acc: Option<(T, T)>, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
        .unwrap_or((T::sentinel(), T::sentinel()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Hypo,
    Hyper,
}

/// A sustained run beyond threshold. `end` is the last reading's timestamp
/// plus one sampling interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlycemicEvent<T> {
    pub kind: EventKind,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub extreme: T,
}

impl<T> GlycemicEvent<T> {
    pub fn duration_minutes(&self) -> i64 {
        (self.end - self.start).num_minutes()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary<T> {
    pub hypo_events: usize,
    pub hyper_events: usize,
    pub events: Vec<GlycemicEvent<T>>,
}

pub const DEFAULT_EVENT_MIN_MINUTES: u32 = 15;

/// Counts hypo- and hyperglycemic events.
///
/// A run is a maximal sequence of consecutive readings strictly beyond the same
/// threshold; a gap over twice the sampling interval ends it. A run counts when
/// first-to-last span plus one interval reaches `min_duration_minutes`.
pub fn detect_events<T: Scalar>(
    series: &GlucoseSeries<T>,
    thresholds: &RangeThresholds<T>,
    rate_minutes: u32,
    min_duration_minutes: u32,
) -> EventSummary<T> {
    assert!(min_duration_minutes > 0, "min duration must be positive");
    let rate = Duration::minutes(i64::from(rate_minutes));
    let max_gap = rate * 2;
    let classify = |v: T| {
        if v < thresholds.low {
            Some(EventKind::Hypo)
        } else if v > thresholds.high {
            Some(EventKind::Hyper)
        } else {
            None
        }
    };

    let mut events = Vec::new();
    let mut close = |run: Option<GlycemicEvent<T>>, last: NaiveDateTime| {
        if let Some(mut ev) = run {
            ev.end = last + rate;
            if ev.duration_minutes() >= i64::from(min_duration_minutes) {
                events.push(ev);
            }
        }
    };

    let mut run: Option<GlycemicEvent<T>> = None;
    let mut last = NaiveDateTime::MIN;
    for r in series.readings() {
        let kind = classify(r.value);
        match (&mut run, kind) {
            (Some(cur), Some(k)) if cur.kind == k && r.timestamp - last <= max_gap => {
                cur.extreme = match k {
                    EventKind::Hypo => cur.extreme.min(r.value),
                    EventKind::Hyper => cur.extreme.max(r.value),
                };
            }
            _ => {
                close(run.take(), last);
                run = kind.map(|k| GlycemicEvent {
                    kind: k,
                    start: r.timestamp,
                    end: r.timestamp,
                    extreme: r.value,
                });
            }
        }
        last = r.timestamp;
    }
    close(run, last);

    let hypo = events.iter().filter(|e| e.kind == EventKind::Hypo).count();
    EventSummary {
        hypo_events: hypo,
        hyper_events: events.len() - hypo,
        events,
    }
}

/// Canonical per-day feature vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    TirPct,
    TbrPct,
    TarPct,
    TirMinutes,
    TbrMinutes,
    TarMinutes,
    MeanGlucose,
    StdGlucose,
    CvPct,
    EstA1cPct,
    GmiPct,
    MinGlucose,
    MaxGlucose,
    HypoEvents,
    HyperEvents,
    WeartimePct,
    WeartimeSufficient,
}

impl Feature {
    pub const ALL: [Feature; 17] = [
        Feature::TirPct,
        Feature::TbrPct,
        Feature::TarPct,
        Feature::TirMinutes,
        Feature::TbrMinutes,
        Feature::TarMinutes,
        Feature::MeanGlucose,
        Feature::StdGlucose,
        Feature::CvPct,
        Feature::EstA1cPct,
        Feature::GmiPct,
        Feature::MinGlucose,
        Feature::MaxGlucose,
        Feature::HypoEvents,
        Feature::HyperEvents,
        Feature::WeartimePct,
        Feature::WeartimeSufficient,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::TirPct => "tir_pct",
            Feature::TbrPct => "tbr_pct",
            Feature::TarPct => "tar_pct",
            Feature::TirMinutes => "tir_minutes",
            Feature::TbrMinutes => "tbr_minutes",
            Feature::TarMinutes => "tar_minutes",
            Feature::MeanGlucose => "mean_glucose",
            Feature::StdGlucose => "std_glucose",
            Feature::CvPct => "cv_pct",
            Feature::EstA1cPct => "est_a1c_pct",
            Feature::GmiPct => "gmi_pct",
            Feature::MinGlucose => "min_glucose",
            Feature::MaxGlucose => "max_glucose",
            Feature::HypoEvents => "hypo_events",
            Feature::HyperEvents => "hyper_events",
            Feature::WeartimePct => "weartime_pct",
            Feature::WeartimeSufficient => "weartime_sufficient",
        }
    }

    /// Short label used inside aggregate keys such as `avg_TIR_all`.
    pub fn label(self) -> &'static str {
        match self {
            Feature::TirPct => "TIR",
            Feature::TbrPct => "TBR",
            Feature::TarPct => "TAR",
            other => other.as_str(),
        }
    }

    /// Human-readable name used in question text.
    pub fn display_name(self) -> &'static str {
        match self {
            Feature::TirPct => "time in range (TIR)",
            Feature::TbrPct => "time below range (TBR)",
            Feature::TarPct => "time above range (TAR)",
            Feature::TirMinutes => "minutes in range",
            Feature::TbrMinutes => "minutes below range",
            Feature::TarMinutes => "minutes above range",
            Feature::MeanGlucose => "average glucose",
            Feature::StdGlucose => "glucose standard deviation",
            Feature::CvPct => "glycemic variability (CV)",
            Feature::EstA1cPct => "estimated A1c",
            Feature::GmiPct => "GMI",
            Feature::MinGlucose => "minimum glucose",
            Feature::MaxGlucose => "maximum glucose",
            Feature::HypoEvents => "hypoglycemia events",
            Feature::HyperEvents => "hyperglycemia events",
            Feature::WeartimePct => "CGM weartime",
            Feature::WeartimeSufficient => "weartime sufficiency",
        }
    }

    /// Features whose "no data" reading may legitimately be reported as 0.
    pub fn is_weartime_like(self) -> bool {
        matches!(self, Feature::WeartimePct | Feature::WeartimeSufficient)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feature {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| MetricsError::UnknownFeature(s.to_string()))
    }
}

/// All daily metrics for one date (or date and clock window). `-1` marks a
/// feature with no data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyFeatureRecord {
    pub date_key: String,
    pub tir_pct: f64,
    pub tbr_pct: f64,
    pub tar_pct: f64,
    pub tir_minutes: f64,
    pub tbr_minutes: f64,
    pub tar_minutes: f64,
    pub mean_glucose: f64,
    pub std_glucose: f64,
    pub cv_pct: f64,
    pub est_a1c_pct: f64,
    pub gmi_pct: f64,
    pub min_glucose: f64,
    pub max_glucose: f64,
    pub hypo_events: f64,
    pub hyper_events: f64,
    pub weartime_pct: f64,
    pub weartime_sufficient: bool,
}

impl DailyFeatureRecord {
    /// Numeric value of a feature; booleans encode as 1/0.
    pub fn get(&self, feature: Feature) -> f64 {
        match feature {
            Feature::TirPct => self.tir_pct,
            Feature::TbrPct => self.tbr_pct,
            Feature::TarPct => self.tar_pct,
            Feature::TirMinutes => self.tir_minutes,
            Feature::TbrMinutes => self.tbr_minutes,
            Feature::TarMinutes => self.tar_minutes,
            Feature::MeanGlucose => self.mean_glucose,
            Feature::StdGlucose => self.std_glucose,
            Feature::CvPct => self.cv_pct,
            Feature::EstA1cPct => self.est_a1c_pct,
            Feature::GmiPct => self.gmi_pct,
            Feature::MinGlucose => self.min_glucose,
            Feature::MaxGlucose => self.max_glucose,
            Feature::HypoEvents => self.hypo_events,
            Feature::HyperEvents => self.hyper_events,
            Feature::WeartimePct => self.weartime_pct,
            Feature::WeartimeSufficient => f64::from(u8::from(self.weartime_sufficient)),
        }
    }

    /// True when at least one reading backed this record.
    pub fn has_data(&self) -> bool {
        self.mean_glucose != SENTINEL
    }
}

/// Computes every daily metric for one already-filtered day.
pub fn day_record<T: Scalar>(
    date_key: String,
    day: &GlucoseSeries<T>,
    thresholds: &RangeThresholds<T>,
    rate_minutes: u32,
    window_minutes: u32,
) -> DailyFeatureRecord {
    let ranges = time_in_ranges(day, thresholds, rate_minutes);
    let stats = summary_stats(day);
    let (lo, hi) = min_max(day);
    let (hypo, hyper) = if day.is_empty() {
        (SENTINEL, SENTINEL)
    } else {
        let ev = detect_events(day, thresholds, rate_minutes, DEFAULT_EVENT_MIN_MINUTES);
        (ev.hypo_events as f64, ev.hyper_events as f64)
    };
    let wear: T = data::weartime_pct(day.len(), window_minutes, rate_minutes);
    DailyFeatureRecord {
        date_key,
        tir_pct: ranges.tir_pct.as_f64(),
        tbr_pct: ranges.tbr_pct.as_f64(),
        tar_pct: ranges.tar_pct.as_f64(),
        tir_minutes: ranges.tir_minutes.as_f64(),
        tbr_minutes: ranges.tbr_minutes.as_f64(),
        tar_minutes: ranges.tar_minutes.as_f64(),
        mean_glucose: stats.mean.as_f64(),
        std_glucose: stats.std.as_f64(),
        cv_pct: stats.cv_pct.as_f64(),
        est_a1c_pct: stats.est_a1c_pct.as_f64(),
        gmi_pct: stats.gmi_pct.as_f64(),
        min_glucose: lo.as_f64(),
        max_glucose: hi.as_f64(),
        hypo_events: hypo,
        hyper_events: hyper,
        weartime_pct: wear.as_f64(),
        weartime_sufficient: data::is_sufficient(wear),
    }
}

/// One [`DailyFeatureRecord`] per selected date, keyed by date key.
pub fn extract_daily_features<T: Scalar>(
    series: &GlucoseSeries<T>,
    selection: &DateSelection,
    thresholds: &RangeThresholds<T>,
    rate_minutes: u32,
) -> BTreeMap<String, DailyFeatureRecord> {
    let filtered = data::filter_series(series, selection);
    let window_minutes = selection.window_minutes();
    selection
        .dates()
        .into_iter()
        .map(|date| {
            let day = filtered.retain_filtered(|r| r.timestamp.date() == date);
            let key = selection.date_key(date);
            let rec = day_record(key.clone(), &day, thresholds, rate_minutes, window_minutes);
            (key, rec)
        })
        .collect()
}
