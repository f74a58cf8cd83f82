use std::f64::consts::TAU;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, GlucoseReading, GlucoseSeries};
use crate::scalar::Scalar;

const MIN_MG_DL: f64 = 40.0;
const MAX_MG_DL: f64 = 400.0;
/// Meal times (minute of day) driving post-prandial bumps.
const MEALS: [f64; 3] = [7.5 * 60.0, 12.5 * 60.0, 18.5 * 60.0];

/// Parameters for a deterministic synthetic CGM trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subject_id: String,
    pub start_date: NaiveDate,
    pub days: u32,
    pub rate_minutes: u32,
    /// Baseline glucose level in mg/dL.
    pub base_level: f64,
    /// Amplitude scale of circadian, meal and noise components in mg/dL.
    /// Zero yields a constant trace.
    pub variability: f64,
    /// Zero-based day indices with no readings at all.
    #[serde(default)]
    pub missing_days: Vec<u32>,
    /// Fraction of samples dropped on each present day.
    #[serde(default)]
    pub missing_sample_fraction: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn constant(subject_id: &str, start_date: NaiveDate, days: u32, rate: u32, level: f64, seed: u64) -> Self {
        Self {
            subject_id: subject_id.to_string(),
            start_date,
            days,
            rate_minutes: rate,
            base_level: level,
            variability: 0.0,
            missing_days: Vec::new(),
            missing_sample_fraction: 0.0,
            seed,
        }
    }

    pub fn samples_per_day(&self) -> usize {
        1440usize.div_ceil(self.rate_minutes as usize)
    }

    fn validate(&self) -> Result<(), DataError> {
        let fail = |m: &str| Err(DataError::InvalidSynthSpec(m.to_string()));
        if self.days == 0 {
            return fail("days must be positive");
        }
        if self.rate_minutes == 0 || self.rate_minutes > 1440 {
            return fail("rate must be within 1..=1440 minutes");
        }
        if !(0.0..1.0).contains(&self.missing_sample_fraction) {
            return fail("missing_sample_fraction must be in [0, 1)");
        }
        if !self.base_level.is_finite() || !self.variability.is_finite() || self.variability < 0.0 {
            return fail("base level and variability must be finite, variability non-negative");
        }
        Ok(())
    }
}

/// Generates a reproducible trace: circadian drift, meal bumps with day-to-day
/// amplitude changes and AR(1) sensor noise, clamped to [40, 400] mg/dL.
pub fn synthesize_series<T: Scalar>(spec: &SynthSpec) -> Result<GlucoseSeries<T>, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let per_day = spec.samples_per_day();
    let drop_count = (spec.missing_sample_fraction * per_day as f64).round() as usize;
    let mut readings = Vec::with_capacity(per_day * spec.days as usize);
    let mut ar = 0.0f64;

    for day in 0..spec.days {
        // draw day-level randomness unconditionally so skipped days do not shift later ones
        let meal_amp: Vec<f64> = MEALS.iter().map(|_| rng.random_range(0.5..1.5)).collect();
        let day_offset = noise.sample(&mut rng) * 0.15;
        let dropped: Vec<usize> = rand::seq::index::sample(&mut rng, per_day, drop_count).into_vec();
        if spec.missing_days.contains(&day) {
            continue;
        }
        let mut keep = vec![true; per_day];
        for i in dropped {
            keep[i] = false;
        }
        let date = spec.start_date + Duration::days(i64::from(day));
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight");
        for (k, kept) in keep.iter().enumerate() {
            ar = 0.8 * ar + 0.2 * noise.sample(&mut rng);
            if !kept {
                continue;
            }
            let minute = (k as u32 * spec.rate_minutes) as f64;
            let circadian = 0.35 * (TAU * (minute / 1440.0 - 0.25)).sin();
            let meals: f64 = MEALS
                .iter()
                .zip(&meal_amp)
                .map(|(m, a)| a * (-((minute - m - 45.0) / 40.0).powi(2)).exp())
                .sum();
            let v = spec.base_level + spec.variability * (circadian + meals + day_offset + ar);
            readings.push(GlucoseReading {
                timestamp: midnight + Duration::minutes(minute as i64),
                value: T::lit(v.clamp(MIN_MG_DL, MAX_MG_DL)),
            });
        }
    }
    Ok(GlucoseSeries::from_sorted(spec.subject_id.clone(), readings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
    }

    #[test]
    fn constant_day() {
        let s: GlucoseSeries<f64> = synthesize_series(&SynthSpec::constant("s", day0(), 1, 5, 100.0, 7)).unwrap();
        assert_eq!(s.len(), 288);
        assert!(s.values().all(|v| v == 100.0));
    }

    #[test]
    fn missing_day() {
        let mut spec = SynthSpec::constant("s", day0(), 2, 15, 100.0, 7);
        spec.missing_days = vec![1];
        let s: GlucoseSeries<f64> = synthesize_series(&spec).unwrap();
        assert_eq!(s.len(), 96);
        assert!(s.readings().iter().all(|r| r.timestamp.date() == day0()));
    }

    #[test]
    fn deterministic_and_bounded() {
        let spec = SynthSpec {
            subject_id: "s".into(),
            start_date: day0(),
            days: 5,
            rate_minutes: 5,
            base_level: 150.0,
            variability: 120.0,
            missing_days: vec![2],
            missing_sample_fraction: 0.1,
            seed: 7,
        };
        let a: GlucoseSeries<f64> = synthesize_series(&spec).unwrap();
        let b: GlucoseSeries<f64> = synthesize_series(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.values().all(|v| (40.0..=400.0).contains(&v)));
        // 4 present days, each missing round(0.1 * 288) = 29 samples
        assert_eq!(a.len(), 4 * (288 - 29));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SynthSpec::constant("s", day0(), 0, 5, 100.0, 1);
        assert!(synthesize_series::<f64>(&spec).is_err());
        spec.days = 1;
        spec.rate_minutes = 0;
        assert!(synthesize_series::<f64>(&spec).is_err());
    }
}
