//! Reference datasets built by search so that the weekly aggregation tools
//! report chosen numbers exactly.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::data::{GlucoseReading, GlucoseSeries};

const RATE_MINUTES: i64 = 5;
const SLOTS_PER_DAY: usize = 288;
/// Fewest readings per day that still count as sufficient weartime at 5 minutes.
const MIN_SUFFICIENT: usize = 202;
const IN_RANGE_VALUE: f64 = 120.0;
const ABOVE_RANGE_VALUE: f64 = 220.0;

/// What `get_average(feature=tir_pct)` should report over one week.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekTarget {
    pub start: NaiveDate,
    pub days_all: usize,
    pub days_sufficient: usize,
    pub avg_tir_sufficient: f64,
    pub avg_tir_all: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayPlan {
    pub date: NaiveDate,
    pub readings: usize,
    pub in_range: usize,
}

impl DayPlan {
    pub fn tir_pct(&self) -> f64 {
        self.in_range as f64 / self.readings as f64 * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekPlan {
    pub target: WeekTarget,
    /// Days with data, in date order.
    pub days: Vec<DayPlan>,
    pub achieved_avg_tir_sufficient: f64,
    pub achieved_avg_tir_all: f64,
    /// False when no assignment reaches the target; the plan is then the closest one found.
    pub exact: bool,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Smallest-error (readings, in_range) pair whose TIR equals `tir` in floating point.
fn find_day(tir: f64, sufficient: bool) -> Option<(usize, usize)> {
    let counts: Vec<usize> = if sufficient {
        (MIN_SUFFICIENT..=SLOTS_PER_DAY).rev().collect()
    } else {
        (100..MIN_SUFFICIENT).rev().collect()
    };
    counts.into_iter().find_map(|n| {
        (0..=n)
            .find(|&k| k as f64 / n as f64 * 100.0 == tir)
            .map(|k| (n, k))
    })
}

/// Integer TIR values for the insufficient days, searched exhaustively.
fn search_insufficient(sufficient: &[f64], m: usize, target: f64) -> (Vec<f64>, bool) {
    let mut best: (f64, Vec<f64>) = (f64::INFINITY, vec![0.0; m]);
    let mut current = vec![0u32; m];
    loop {
        let tail: Vec<f64> = current.iter().map(|&v| f64::from(v)).collect();
        let mut all = sufficient.to_vec();
        all.extend(&tail);
        let err = (mean(&all) - target).abs();
        if err < best.0 {
            best = (err, tail);
            if err == 0.0 {
                break;
            }
        }
        // odometer over non-decreasing tuples
        let Some(i) = (0..m).rev().find(|&i| current[i] < 100) else {
            break;
        };
        current[i] += 1;
        let v = current[i];
        for c in current.iter_mut().skip(i + 1) {
            *c = v;
        }
    }
    (best.1, best.0 == 0.0)
}

/// Searches for per-day readings realizing `target`. Sufficient days all sit
/// at the sufficient average; the remaining days absorb the difference.
pub fn plan_week(target: WeekTarget) -> WeekPlan {
    assert!(target.days_sufficient <= target.days_all && target.days_all <= 7);
    let m = target.days_all - target.days_sufficient;
    let good = vec![target.avg_tir_sufficient; target.days_sufficient];
    let (tail, mut exact) = if m == 0 {
        (Vec::new(), mean(&good) == target.avg_tir_all)
    } else {
        search_insufficient(&good, m, target.avg_tir_all)
    };
    let mut specs: Vec<(usize, usize)> = Vec::new();
    for (i, tir) in good.iter().chain(&tail).enumerate() {
        match find_day(*tir, i < target.days_sufficient) {
            Some(s) => specs.push(s),
            None => {
                exact = false;
                let n = if i < target.days_sufficient { SLOTS_PER_DAY } else { 144 };
                specs.push((n, ((tir / 100.0) * n as f64).round() as usize));
            }
        }
    }
    // interleave: insufficient days after the first sufficient one, missing days last
    let mut order: Vec<usize> = (0..target.days_sufficient).collect();
    for j in 0..m {
        order.insert((1 + 2 * j).min(order.len()), target.days_sufficient + j);
    }
    let days: Vec<DayPlan> = order
        .iter()
        .enumerate()
        .map(|(offset, &i)| DayPlan {
            date: target.start + Duration::days(offset as i64),
            readings: specs[i].0,
            in_range: specs[i].1,
        })
        .collect();
    let suff: Vec<f64> = days.iter().filter(|d| d.readings >= MIN_SUFFICIENT).map(DayPlan::tir_pct).collect();
    let all: Vec<f64> = days.iter().map(DayPlan::tir_pct).collect();
    let achieved_avg_tir_sufficient = mean(&suff);
    let achieved_avg_tir_all = mean(&all);
    exact &= achieved_avg_tir_sufficient == target.avg_tir_sufficient && achieved_avg_tir_all == target.avg_tir_all;
    WeekPlan {
        target,
        days,
        achieved_avg_tir_sufficient,
        achieved_avg_tir_all,
        exact,
    }
}

/// Readings for the planned days: in-range readings first, then above range.
pub fn realize(subject_id: &str, plans: &[WeekPlan]) -> GlucoseSeries<f64> {
    let mut readings = Vec::new();
    for day in plans.iter().flat_map(|p| &p.days) {
        let midnight: NaiveDateTime = day.date.and_hms_opt(0, 0, 0).expect("midnight");
        for i in 0..day.readings {
            readings.push(GlucoseReading {
                timestamp: midnight + Duration::minutes(RATE_MINUTES * i as i64),
                value: if i < day.in_range { IN_RANGE_VALUE } else { ABOVE_RANGE_VALUE },
            });
        }
    }
    readings.sort_by_key(|r| r.timestamp);
    GlucoseSeries::from_sorted(subject_id, readings)
}

pub const TWO_WEEK_SUBJECT: &str = "fixture-two-week";

/// "This week" then "last week" relative to [`two_week_reference`].
pub fn two_week_targets() -> [WeekTarget; 2] {
    let d = |s: &str| s.parse::<NaiveDate>().expect("date literal");
    [
        WeekTarget {
            start: d("2024-01-08"),
            days_all: 6,
            days_sufficient: 4,
            avg_tir_sufficient: 72.0,
            avg_tir_all: 76.0,
        },
        WeekTarget {
            start: d("2024-01-01"),
            days_all: 7,
            days_sufficient: 5,
            avg_tir_sufficient: 78.0,
            avg_tir_all: 86.0,
        },
    ]
}

/// Sunday evening at the end of the fixture's second week.
pub fn two_week_reference() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 14)
        .and_then(|d| d.and_hms_opt(21, 0, 0))
        .expect("valid reference")
}

pub fn two_week_fixture() -> (GlucoseSeries<f64>, Vec<WeekPlan>) {
    let plans: Vec<WeekPlan> = two_week_targets().into_iter().map(plan_week).collect();
    (realize(TWO_WEEK_SUBJECT, &plans), plans)
}
