//! Cross-day analytics over daily feature records and raw series: stratified
//! averages, condition counts, extrema, group comparisons, excursions and
//! 24-hour trend profiles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DateSelection, GlucoseSeries};
use crate::metrics::{DailyFeatureRecord, Feature, RangeThresholds};
use crate::scalar::{Scalar, SENTINEL};

pub const DEFAULT_EXCURSION_SPEED: f64 = 2.0;
pub const DEFAULT_EXCURSION_WINDOW_MINUTES: u32 = 15;
pub const DEFAULT_TREND_BIN_MINUTES: u32 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("no day has a value for `{0}`")]
    NoValues(Feature),
    #[error("group `{0}` has no usable days")]
    EmptyGroup(String),
    #[error("groups overlap on `{0}`")]
    OverlappingGroups(String),
    #[error("unknown comparator `{0}`")]
    UnknownComparator(String),
    #[error("bin size {0} minutes must be positive and divide 1440")]
    InvalidBin(u32),
    #[error("invalid excursion parameters: {0}")]
    InvalidExcursionParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    #[default]
    All,
    SufficientWeartime,
}

impl Stratum {
    fn admits(self, rec: &DailyFeatureRecord) -> bool {
        rec.has_data() && (self == Stratum::All || rec.weartime_sufficient)
    }
}

/// Means of one feature over two strata. Averages are `-1` for an empty stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub days_all: usize,
    pub avg_all: f64,
    pub days_sufficient_weartime: usize,
    pub avg_sufficient_weartime: f64,
}

fn stratum_values<'a>(
    records: impl IntoIterator<Item = &'a DailyFeatureRecord>,
    feature: Feature,
    stratum: Stratum,
) -> Vec<f64> {
    records
        .into_iter()
        .filter(|r| stratum.admits(r))
        .map(|r| r.get(feature))
        .filter(|&v| v != SENTINEL)
        .collect()
}

fn mean_or_sentinel(values: &[f64]) -> f64 {
    if values.is_empty() {
        SENTINEL
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn average_over_days(
    records: &BTreeMap<String, DailyFeatureRecord>,
    feature: Feature,
) -> AggregateResult {
    let all = stratum_values(records.values(), feature, Stratum::All);
    let good = stratum_values(records.values(), feature, Stratum::SufficientWeartime);
    AggregateResult {
        days_all: all.len(),
        avg_all: mean_or_sentinel(&all),
        days_sufficient_weartime: good.len(),
        avg_sufficient_weartime: mean_or_sentinel(&good),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Comparator {
    const EQ_EPS: f64 = 1e-9;

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Eq => (lhs - rhs).abs() <= Self::EQ_EPS,
            Comparator::Ge => lhs >= rhs,
            Comparator::Gt => lhs > rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Eq => "==",
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Comparator {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "<" | "lt" => Comparator::Lt,
            "<=" | "≤" | "le" => Comparator::Le,
            "=" | "==" | "eq" => Comparator::Eq,
            ">=" | "≥" | "ge" => Comparator::Ge,
            ">" | "gt" => Comparator::Gt,
            other => return Err(AggregationError::UnknownComparator(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: Feature,
    pub comparator: Comparator,
    pub threshold: f64,
}

/// Days whose (non-sentinel) feature value satisfies the condition.
pub fn count_days_satisfying(
    records: &BTreeMap<String, DailyFeatureRecord>,
    condition: &Condition,
) -> usize {
    records
        .values()
        .map(|r| r.get(condition.feature))
        .filter(|&v| v != SENTINEL && condition.comparator.holds(v, condition.threshold))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumMode {
    Min,
    Max,
}

/// Day holding the smallest or largest value; ties go to the earliest key.
pub fn feature_extremum(
    records: &BTreeMap<String, DailyFeatureRecord>,
    feature: Feature,
    mode: ExtremumMode,
) -> Result<(String, f64), AggregationError> {
    let mut best: Option<(&String, f64)> = None;
    for (key, rec) in records {
        let v = rec.get(feature);
        if v == SENTINEL {
            continue;
        }
        let better = match (best, mode) {
            (None, _) => true,
            (Some((_, b)), ExtremumMode::Min) => v < b,
            (Some((_, b)), ExtremumMode::Max) => v > b,
        };
        if better {
            best = Some((key, v));
        }
    }
    best.map(|(k, v)| (k.clone(), v))
        .ok_or(AggregationError::NoValues(feature))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HigherGroup {
    A,
    B,
    Tie,
}

impl HigherGroup {
    /// Wire encoding: 1 for A, 2 for B, 0 for a tie.
    pub fn code(self) -> f64 {
        match self {
            HigherGroup::A => 1.0,
            HigherGroup::B => 2.0,
            HigherGroup::Tie => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub avg_a: f64,
    pub avg_b: f64,
    pub days_a: usize,
    pub days_b: usize,
    pub absolute_difference: f64,
    /// `avg_a / avg_b`, or `-1` when `avg_b` is zero.
    pub ratio: f64,
    pub higher_group: HigherGroup,
}

/// Compares a feature's mean between two disjoint sets of record keys.
pub fn compare_groups(
    records: &BTreeMap<String, DailyFeatureRecord>,
    feature: Feature,
    group_a: &[String],
    group_b: &[String],
    stratum: Stratum,
) -> Result<GroupComparison, AggregationError> {
    let a: BTreeSet<&String> = group_a.iter().collect();
    if let Some(dup) = group_b.iter().find(|k| a.contains(k)) {
        return Err(AggregationError::OverlappingGroups(dup.clone()));
    }
    let collect = |keys: &[String], label: &str| {
        let vals = stratum_values(keys.iter().filter_map(|k| records.get(k)), feature, stratum);
        if vals.is_empty() {
            Err(AggregationError::EmptyGroup(label.to_string()))
        } else {
            Ok(vals)
        }
    };
    let va = collect(group_a, "A")?;
    let vb = collect(group_b, "B")?;
    let avg_a = mean_or_sentinel(&va);
    let avg_b = mean_or_sentinel(&vb);
    let higher_group = if avg_a > avg_b {
        HigherGroup::A
    } else if avg_b > avg_a {
        HigherGroup::B
    } else {
        HigherGroup::Tie
    };
    Ok(GroupComparison {
        avg_a,
        avg_b,
        days_a: va.len(),
        days_b: vb.len(),
        absolute_difference: (avg_a - avg_b).abs(),
        ratio: if avg_b == 0.0 { SENTINEL } else { avg_a / avg_b },
        higher_group,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Rise,
    Fall,
}

/// A rapid rise or fall.
///
/// `magnitude` spans the whole (possibly merged) excursion; `speed` and
/// `window_magnitude` come from its steepest window. For a single-window
/// excursion `speed == magnitude / window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excursion<T> {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub magnitude: T,
    pub speed: T,
    pub window_magnitude: T,
    pub direction: Direction,
}

impl<T> Excursion<T> {
    pub fn duration_minutes(&self) -> i64 {
        (self.end - self.start).num_minutes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionParams {
    /// mg/dL per minute; a window qualifies when its |speed| is strictly greater.
    pub speed_threshold: f64,
    pub window_minutes: u32,
}

impl Default for ExcursionParams {
    fn default() -> Self {
        Self {
            speed_threshold: DEFAULT_EXCURSION_SPEED,
            window_minutes: DEFAULT_EXCURSION_WINDOW_MINUTES,
        }
    }
}

impl ExcursionParams {
    pub fn validate(&self) -> Result<(), AggregationError> {
        if !(self.speed_threshold > 0.0 && self.speed_threshold.is_finite()) {
            return Err(AggregationError::InvalidExcursionParams(format!(
                "speed threshold {} must be positive",
                self.speed_threshold
            )));
        }
        if self.window_minutes == 0 {
            return Err(AggregationError::InvalidExcursionParams(
                "window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Every qualifying window placement, before merging, ordered by start.
///
/// A placement pairs reading `i` with the reading exactly `window_minutes`
/// later; placements whose far end is missing are skipped.
pub fn excursion_windows<T: Scalar>(
    series: &GlucoseSeries<T>,
    params: &ExcursionParams,
) -> Vec<Excursion<T>> {
    let readings = series.readings();
    let window = Duration::minutes(i64::from(params.window_minutes));
    let minutes = T::lit(f64::from(params.window_minutes));
    let threshold = T::lit(params.speed_threshold);
    let mut out = Vec::new();
    let mut j = 0;
    for (i, a) in readings.iter().enumerate() {
        let target = a.timestamp + window;
        j = j.max(i + 1);
        while j < readings.len() && readings[j].timestamp < target {
            j += 1;
        }
        let Some(b) = readings.get(j).filter(|b| b.timestamp == target) else {
            continue;
        };
        let magnitude = b.value - a.value;
        let speed = magnitude / minutes;
        if speed.abs() > threshold {
            out.push(Excursion {
                start: a.timestamp,
                end: b.timestamp,
                magnitude,
                speed,
                window_magnitude: magnitude,
                direction: if magnitude > T::zero() {
                    Direction::Rise
                } else {
                    Direction::Fall
                },
            });
        }
    }
    out
}

/// Merges strictly overlapping same-direction windows into single excursions.
pub fn merge_excursions<T: Scalar>(
    series: &GlucoseSeries<T>,
    windows: &[Excursion<T>],
) -> Vec<Excursion<T>> {
    let value_at = |t: NaiveDateTime| {
        let readings = series.readings();
        let idx = readings
            .binary_search_by_key(&t, |r| r.timestamp)
            .expect("window endpoints are readings of the series");
        readings[idx].value
    };
    let mut merged: Vec<Excursion<T>> = Vec::new();
    for dir in [Direction::Rise, Direction::Fall] {
        let mut current: Option<Excursion<T>> = None;
        for w in windows.iter().filter(|w| w.direction == dir) {
            match current.as_mut() {
                Some(cur) if w.start < cur.end => {
                    cur.end = cur.end.max(w.end);
                    if w.speed.abs() > cur.speed.abs() {
                        cur.speed = w.speed;
                        cur.window_magnitude = w.window_magnitude;
                    }
                }
                _ => {
                    merged.extend(current.take());
                    current = Some(*w);
                }
            }
        }
        merged.extend(current);
    }
    for ex in &mut merged {
        ex.magnitude = value_at(ex.end) - value_at(ex.start);
    }
    merged.sort_by_key(|a| (a.start, a.direction));
    merged
}

pub fn detect_excursions<T: Scalar>(
    series: &GlucoseSeries<T>,
    params: &ExcursionParams,
) -> Result<Vec<Excursion<T>>, AggregationError> {
    params.validate()?;
    let windows = excursion_windows(series, params);
    Ok(merge_excursions(series, &windows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendBin {
    /// Bin start as `HH:MM`.
    pub clock: String,
    pub start_minute: u32,
    /// `-1` for bins without samples.
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendProfile {
    pub bin_minutes: u32,
    pub bins: Vec<TrendBin>,
}

impl TrendProfile {
    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

pub fn validate_bin(bin_minutes: u32) -> Result<(), AggregationError> {
    if bin_minutes == 0 || 1440 % bin_minutes != 0 {
        return Err(AggregationError::InvalidBin(bin_minutes));
    }
    Ok(())
}

/// Average daily profile: readings from every selected day pooled by clock bin.
pub fn daily_trend_profile<T: Scalar>(
    series: &GlucoseSeries<T>,
    selection: &DateSelection,
    bin_minutes: u32,
) -> Result<TrendProfile, AggregationError> {
    validate_bin(bin_minutes)?;
    let filtered = data::filter_series(series, selection);
    let n_bins = (1440 / bin_minutes) as usize;
    let mut buckets: Vec<Vec<T>> = vec![Vec::new(); n_bins];
    for r in filtered.readings() {
        let minute = r.timestamp.time().num_seconds_from_midnight() / 60;
        buckets[(minute / bin_minutes) as usize].push(r.value);
    }
    let bins = buckets
        .into_iter()
        .enumerate()
        .map(|(i, vals)| {
            let start_minute = i as u32 * bin_minutes;
            let (mean, std) = if vals.is_empty() {
                (SENTINEL, SENTINEL)
            } else {
                let n = T::from_count(vals.len());
                let mean = vals.iter().fold(T::zero(), |a, &v| a + v) / n;
                let var = vals.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
                (mean.as_f64(), var.sqrt().as_f64())
            };
            TrendBin {
                clock: crate::data::fmt_minute(start_minute),
                start_minute,
                mean,
                std,
                count: vals.len(),
            }
        })
        .collect();
    Ok(TrendProfile { bin_minutes, bins })
}

const SVG_W: f64 = 960.0;
const SVG_H: f64 = 420.0;
const PAD_L: f64 = 60.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 50.0;

/// Static 24-hour chart: mean line, ±1 SD band, threshold lines, hour axis.
/// Output is byte-stable for identical input.
pub fn render_trend_svg(profile: &TrendProfile, thresholds: &RangeThresholds<f64>) -> String {
    let peak = profile
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.mean + b.std)
        .fold(thresholds.high, f64::max);
    let y_max = ((peak + 20.0) / 50.0).ceil() * 50.0;
    let plot_w = SVG_W - PAD_L - PAD_R;
    let plot_h = SVG_H - PAD_T - PAD_B;
    let x = |minute: f64| PAD_L + minute / 1440.0 * plot_w;
    let y = |v: f64| PAD_T + (1.0 - v.clamp(0.0, y_max) / y_max) * plot_h;
    let half = f64::from(profile.bin_minutes) / 2.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{SVG_W}" height="{SVG_H}" fill="white"/>"#);

    // contiguous runs of bins with samples
    let mut segments: Vec<Vec<&TrendBin>> = Vec::new();
    let mut run: Vec<&TrendBin> = Vec::new();
    for b in &profile.bins {
        if b.count > 0 {
            run.push(b);
        } else if !run.is_empty() {
            segments.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        segments.push(run);
    }

    for seg in &segments {
        let upper = seg
            .iter()
            .map(|b| format!("{:.2},{:.2}", x(f64::from(b.start_minute) + half), y(b.mean + b.std)));
        let lower = seg
            .iter()
            .rev()
            .map(|b| format!("{:.2},{:.2}", x(f64::from(b.start_minute) + half), y(b.mean - b.std)));
        let pts: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            svg,
            r##"<polygon class="sd-band" points="{}" fill="#9ad0a5" fill-opacity="0.4" stroke="none"/>"##,
            pts.join(" ")
        );
    }
    for (label, v) in [("low", thresholds.low), ("high", thresholds.high)] {
        let _ = writeln!(
            svg,
            r##"<line class="threshold-{label}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#c0392b" stroke-dasharray="6 4"/>"##,
            PAD_L,
            y(v),
            PAD_L + plot_w,
            y(v)
        );
    }
    for seg in &segments {
        let pts: Vec<String> = seg
            .iter()
            .map(|b| format!("{:.2},{:.2}", x(f64::from(b.start_minute) + half), y(b.mean)))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline class="mean" points="{}" fill="none" stroke="#1e8449" stroke-width="2"/>"##,
            pts.join(" ")
        );
    }

    let axis_y = PAD_T + plot_h;
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD_L:.2}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
        PAD_L + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD_L:.2}" y1="{PAD_T:.2}" x2="{PAD_L:.2}" y2="{axis_y:.2}" stroke="black"/>"#
    );
    for hour in (0..=24).step_by(3) {
        let hx = x(f64::from(hour) * 60.0);
        let _ = writeln!(
            svg,
            r#"<text x="{hx:.2}" y="{:.2}" font-size="12" text-anchor="middle">{hour:02}:00</text>"#,
            axis_y + 18.0
        );
    }
    let mut tick = 0.0;
    while tick <= y_max {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{tick}</text>"#,
            PAD_L - 6.0,
            y(tick) + 4.0
        );
        tick += 50.0;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">Time of day</text>"#,
        PAD_L + plot_w / 2.0,
        SVG_H - 8.0
    );
    svg.push_str("</svg>\n");
    svg
}
