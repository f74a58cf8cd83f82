use chrono::{Duration, NaiveDate, NaiveDateTime};
use proptest::prelude::*;

use cgmqa_core::aggregation::{
    compare_groups, daily_trend_profile, detect_excursions, Direction, ExcursionParams, HigherGroup, Stratum,
};
use cgmqa_core::data::{is_sufficient, weartime_pct, DateSelection, GlucoseReading, GlucoseSeries};
use cgmqa_core::metrics::{
    detect_events, extract_daily_features, summary_stats, time_in_ranges, EventKind, Feature, RangeThresholds,
};
use cgmqa_core::{CompactSeries, Series};

/// Pinned tolerances for floating-point oracle comparisons.
const REL_TOL: f64 = 1e-9;
const F32_REL_TOL: f64 = 1e-4;

fn t0() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 2, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

/// Readings every `rate` minutes, skipping indices where `keep` is false.
fn series(values: &[f64], keep: &[bool], rate: i64) -> Series {
    GlucoseSeries::from_sorted(
        "p",
        values
            .iter()
            .enumerate()
            .filter(|(i, _)| keep.get(*i).copied().unwrap_or(true))
            .map(|(i, &v)| GlucoseReading { timestamp: t0() + Duration::minutes(i as i64 * rate), value: v })
            .collect(),
    )
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(40.0f64..400.0, 1..300)
}

#[test]
fn weartime_boundary_at_five_minutes() {
    let below: f64 = weartime_pct(201, 1440, 5);
    let at: f64 = weartime_pct(202, 1440, 5);
    assert!(!is_sufficient(below));
    assert!(is_sufficient(at));
    assert!((at - 202.0 / 288.0 * 100.0).abs() < REL_TOL);
}

proptest! {
    #[test]
    fn range_and_summary_match_naive(vals in values(), rate in prop::sample::select(vec![1u32, 5, 15])) {
        let s = series(&vals, &[], i64::from(rate));
        let th = RangeThresholds::default();
        let r = time_in_ranges(&s, &th, rate);
        let n = vals.len() as f64;
        let within = vals.iter().filter(|v| **v >= 70.0 && **v <= 180.0).count() as f64;
        let below = vals.iter().filter(|v| **v < 70.0).count() as f64;
        prop_assert!(close(r.tir_pct, within * 100.0 / n, REL_TOL));
        prop_assert!(close(r.tbr_pct, below * 100.0 / n, REL_TOL));
        prop_assert!(close(r.tir_pct + r.tbr_pct + r.tar_pct, 100.0, REL_TOL));
        prop_assert_eq!(r.tir_minutes, within * f64::from(rate));

        // moments by the shifted-data formula, independent of the toolkit's two-pass fold
        let k = vals[0];
        let s1: f64 = vals.iter().map(|v| v - k).sum();
        let s2: f64 = vals.iter().map(|v| (v - k) * (v - k)).sum();
        let mean = k + s1 / n;
        let sd = ((s2 - s1 * s1 / n) / n).max(0.0).sqrt();
        let st = summary_stats(&s);
        prop_assert!(close(st.mean, mean, REL_TOL));
        prop_assert!((st.std - sd).abs() < 1e-6);
        prop_assert!(close(st.cv_pct, 100.0 * st.std / st.mean, REL_TOL));
        prop_assert!(close(st.est_a1c_pct, (mean + 46.7) / 28.7, REL_TOL));
        prop_assert!(close(st.gmi_pct, 3.31 + 0.02392 * mean, REL_TOL));
    }

    #[test]
    fn compact_precision_tracks_f64(vals in values()) {
        let s = series(&vals, &[], 5);
        let c: CompactSeries = s.cast();
        let (a, b) = (summary_stats(&s), summary_stats(&c));
        prop_assert!(close(a.mean, f64::from(b.mean), F32_REL_TOL));
        let (ra, rb) = (time_in_ranges(&s, &RangeThresholds::default(), 5), time_in_ranges(&c, &RangeThresholds::default(), 5));
        prop_assert!(close(ra.tir_pct, f64::from(rb.tir_pct), F32_REL_TOL));
    }

    #[test]
    fn events_are_long_enough_maximal_runs(
        vals in prop::collection::vec(prop_oneof![40.0f64..69.0, 70.0f64..180.0, 181.0f64..300.0], 1..200),
        keep in prop::collection::vec(prop::bool::weighted(0.9), 200),
    ) {
        let rate = 5i64;
        let s = series(&vals, &keep, rate);
        let got = detect_events(&s, &RangeThresholds::default(), rate as u32, 15);
        // oracle: split at class changes and gaps over two sampling intervals
        let class = |v: f64| if v < 70.0 { Some(EventKind::Hypo) } else if v > 180.0 { Some(EventKind::Hyper) } else { None };
        let rs = s.readings();
        let mut expected = Vec::new();
        let mut i = 0;
        while i < rs.len() {
            let k = class(rs[i].value);
            let mut j = i;
            while j + 1 < rs.len()
                && class(rs[j + 1].value) == k
                && (rs[j + 1].timestamp - rs[j].timestamp).num_minutes() <= 2 * rate
            {
                j += 1;
            }
            if let Some(kind) = k {
                let end = rs[j].timestamp + Duration::minutes(rate);
                if (end - rs[i].timestamp).num_minutes() >= 15 {
                    expected.push((kind, rs[i].timestamp, end));
                }
            }
            i = j + 1;
        }
        let actual: Vec<_> = got.events.iter().map(|e| (e.kind, e.start, e.end)).collect();
        prop_assert_eq!(actual, expected);
        prop_assert_eq!(got.hypo_events + got.hyper_events, got.events.len());
    }

    #[test]
    fn excursions_match_brute_force(
        vals in prop::collection::vec(60.0f64..300.0, 2..120),
        keep in prop::collection::vec(prop::bool::weighted(0.85), 120),
        threshold in 0.5f64..4.0,
    ) {
        let rate = 5i64;
        let window = 15u32;
        let s = series(&vals, &keep, rate);
        let params = ExcursionParams { speed_threshold: threshold, window_minutes: window };
        let got = detect_excursions(&s, &params).unwrap();
        let rs = s.readings();
        let value_at = |t: NaiveDateTime| rs.iter().find(|r| r.timestamp == t).unwrap().value;
        // all reading pairs exactly one window apart whose speed clears the threshold
        let mut windows: Vec<(Direction, NaiveDateTime, NaiveDateTime, f64)> = Vec::new();
        for a in rs {
            for b in rs {
                if (b.timestamp - a.timestamp).num_minutes() == i64::from(window) {
                    let speed = (b.value - a.value) / f64::from(window);
                    if speed.abs() > threshold {
                        let dir = if speed > 0.0 { Direction::Rise } else { Direction::Fall };
                        windows.push((dir, a.timestamp, b.timestamp, speed));
                    }
                }
            }
        }
        windows.sort_by_key(|x| (x.0, x.1));
        let mut expected: Vec<(NaiveDateTime, Direction, NaiveDateTime, f64)> = Vec::new();
        let mut cur: Option<(Direction, NaiveDateTime, NaiveDateTime, f64)> = None;
        for w in windows {
            cur = match cur {
                Some(c) if c.0 == w.0 && w.1 < c.2 => {
                    let speed = if w.3.abs() > c.3.abs() { w.3 } else { c.3 };
                    Some((c.0, c.1, c.2.max(w.2), speed))
                }
                Some(c) => {
                    expected.push((c.1, c.0, c.2, c.3));
                    Some(w)
                }
                None => Some(w),
            };
        }
        expected.extend(cur.map(|c| (c.1, c.0, c.2, c.3)));
        expected.sort_by_key(|x| (x.0, x.1));
        prop_assert_eq!(got.len(), expected.len());
        for (g, (start, dir, end, speed)) in got.iter().zip(&expected) {
            prop_assert_eq!((g.start, g.direction, g.end), (*start, *dir, *end));
            prop_assert!(close(g.magnitude, value_at(*end) - value_at(*start), REL_TOL));
            prop_assert!(close(g.speed, *speed, REL_TOL));
            prop_assert!(g.speed.abs() > threshold);
        }
    }

    #[test]
    fn comparison_is_antisymmetric(
        vals in prop::collection::vec(50.0f64..350.0, 288 * 6),
        split in 1usize..5,
        feature in prop::sample::select(vec![Feature::TirPct, Feature::MeanGlucose, Feature::CvPct]),
    ) {
        let s = series(&vals, &[], 5);
        let start = t0().date();
        let sel = DateSelection::range(start, start + Duration::days(5));
        let recs = extract_daily_features(&s, &sel, &RangeThresholds::default(), 5);
        let keys: Vec<String> = recs.keys().cloned().collect();
        let (a, b) = keys.split_at(split);
        let ab = compare_groups(&recs, feature, a, b, Stratum::All).unwrap();
        let ba = compare_groups(&recs, feature, b, a, Stratum::All).unwrap();
        prop_assert_eq!(ab.absolute_difference, ba.absolute_difference);
        prop_assert_eq!((ab.avg_a, ab.avg_b), (ba.avg_b, ba.avg_a));
        let swapped = match ab.higher_group {
            HigherGroup::A => HigherGroup::B,
            HigherGroup::B => HigherGroup::A,
            HigherGroup::Tie => HigherGroup::Tie,
        };
        prop_assert_eq!(ba.higher_group, swapped);
        if ab.avg_a != 0.0 && ab.avg_b != 0.0 {
            prop_assert!(close(ab.ratio * ba.ratio, 1.0, REL_TOL));
        }
    }

    #[test]
    fn trend_profile_conserves_readings(
        vals in prop::collection::vec(40.0f64..400.0, 1..900),
        keep in prop::collection::vec(prop::bool::weighted(0.8), 900),
        bin in prop::sample::select(vec![15u32, 30, 60, 120]),
    ) {
        let s = series(&vals, &keep, 5);
        let first = s.first_date().unwrap();
        let sel = DateSelection::range(first, s.last_date().unwrap());
        let p = daily_trend_profile(&s, &sel, bin).unwrap();
        prop_assert_eq!(p.bins.len() as u32, 1440 / bin);
        prop_assert_eq!(p.total_count(), s.len());
        let weighted: f64 = p.bins.iter().filter(|b| b.count > 0).map(|b| b.mean * b.count as f64).sum();
        let total: f64 = s.values().sum();
        prop_assert!(close(weighted, total, 1e-9));
    }
}
