//! Deterministic wording of execution results. Used by the offline backends
//! and for the all-missing shortcut.

use chrono::NaiveDateTime;

use crate::data::parse_timestamp;
use crate::sandbox::Payload;
use crate::scalar::SENTINEL;

fn is_clock(s: &str) -> bool {
    s.len() == 5 && s.as_bytes()[2] == b':' && s.bytes().filter(u8::is_ascii_digit).count() == 4
}

fn excursion_span(key: &str) -> Option<(NaiveDateTime, NaiveDateTime)> {
    let inner = key.strip_prefix('(')?.strip_suffix(')')?;
    let (a, b) = inner.split_once(", ")?;
    if a.len() < 19 {
        return None;
    }
    Some((parse_timestamp(a)?, parse_timestamp(b)?))
}

/// Human wording of one payload date key.
pub fn key_period(key: &str) -> String {
    if let Some((a, b)) = key.split_once(" vs ") {
        return format!("{} vs {}", key_period(a), key_period(b));
    }
    if let Some((a, b)) = excursion_span(key) {
        return format!("{} {} to {}", a.date(), a.format("%H:%M"), b.format("%H:%M"));
    }
    let (base, window) = match key.rsplit_once(' ') {
        Some((b, w)) if w.len() == 11 && w.as_bytes()[5] == b'-' && (b.ends_with(')') || b.ends_with(']')) => {
            (b, Some(w))
        }
        _ => (key, None),
    };
    let body = if let Some(inner) = base.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
        match inner.split_once(", ") {
            Some((a, b)) if a.len() == 16 && b.len() == 16 && a[..10] == b[..10] => {
                format!("{} {}-{}", &a[..10], &a[11..], &b[11..])
            }
            Some((a, b)) => format!("{a} to {b}"),
            None => inner.to_string(),
        }
    } else if let Some(inner) = base.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        inner.replace('\'', "")
    } else {
        base.to_string()
    };
    match window {
        Some(w) => format!("{body}, {w}"),
        None => body,
    }
}

/// The period a payload covers, for citing in the answer.
pub fn cited_period(payload: &Payload) -> Option<String> {
    let keys: Vec<&String> = payload.keys().filter(|k| excursion_span(k).is_none()).collect();
    let aggregate = keys
        .iter()
        .find(|k| k.starts_with('(') || k.starts_with('[') || k.contains(" vs "));
    if let Some(k) = aggregate {
        return Some(key_period(k));
    }
    match keys.as_slice() {
        [] => payload.keys().next().map(|k| key_period(k)),
        [one] => Some(key_period(one)),
        many => Some(format!("{} to {}", key_period(many[0]), key_period(many[many.len() - 1]))),
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e12 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn base_phrase(name: &str) -> (&'static str, &'static str) {
    match name.to_ascii_lowercase().as_str() {
        "tir" | "tir_pct" => ("time in range", "%"),
        "tbr" | "tbr_pct" => ("time below range", "%"),
        "tar" | "tar_pct" => ("time above range", "%"),
        "tir_minutes" => ("minutes in range", ""),
        "tbr_minutes" => ("minutes below range", ""),
        "tar_minutes" => ("minutes above range", ""),
        "mean_glucose" => ("average glucose", " mg/dL"),
        "std_glucose" => ("glucose standard deviation", " mg/dL"),
        "cv_pct" => ("glycemic variability (CV)", "%"),
        "est_a1c_pct" => ("estimated A1c", "%"),
        "gmi_pct" => ("GMI", "%"),
        "min_glucose" => ("lowest glucose", " mg/dL"),
        "max_glucose" => ("highest glucose", " mg/dL"),
        "hypo_events" => ("hypoglycemia events", ""),
        "hyper_events" => ("hyperglycemia events", ""),
        "weartime_pct" => ("CGM weartime", "%"),
        "weartime_sufficient" => ("sufficient weartime (1 = yes)", ""),
        "days_all" => ("days with data", ""),
        "days_sufficient_weartime" => ("days with at least 70% weartime", ""),
        "days_satisfied" => ("days meeting the condition", ""),
        "days_considered" => ("days evaluated", ""),
        "num_excursions" => ("rapid excursions", ""),
        "absolute_difference" => ("absolute difference", ""),
        "ratio" => ("ratio (first / second)", ""),
        "higher_group" => ("higher period (1 = first, 2 = second, 0 = tie)", ""),
        "num_readings" => ("readings", ""),
        "num_days" => ("days", ""),
        "sampling_rate_minutes" => ("sampling interval in minutes", ""),
        _ => ("", ""),
    }
}

fn feature_phrase(name: &str) -> (String, &'static str) {
    let (p, u) = base_phrase(name);
    if !p.is_empty() {
        return (p.to_string(), u);
    }
    for (prefix, lead) in [("avg_", "average "), ("min_", "lowest "), ("max_", "highest ")] {
        if let Some(rest) = name.strip_prefix(prefix) {
            for (suffix, tail) in [
                ("_sufficient_weartime", " on days with sufficient weartime"),
                ("_all", " across all days with data"),
                ("_group_a", " for the first period"),
                ("_group_b", " for the second period"),
                ("", ""),
            ] {
                if let Some(base) = rest.strip_suffix(suffix) {
                    let (p, u) = base_phrase(base);
                    if !p.is_empty() {
                        return (format!("{lead}{p}{tail}"), u);
                    }
                }
            }
        }
    }
    (name.replace('_', " "), "")
}

/// One clause per reported value, grouped by date key.
pub fn describe_payload(payload: &Payload) -> Vec<String> {
    let mut out = Vec::new();
    for (key, row) in payload {
        if let Some((a, b)) = excursion_span(key) {
            let magnitude = row.get("magnitude").copied().unwrap_or(0.0);
            let speed = row.get("speed").copied().unwrap_or(0.0);
            let dir = if magnitude >= 0.0 { "rise" } else { "drop" };
            out.push(format!(
                "a {dir} of {:.1} mg/dL in {} minutes starting {} at {} (about {:.1} mg/dL per minute)",
                magnitude.abs(),
                (b - a).num_minutes(),
                a.date(),
                a.format("%H:%M"),
                speed.abs()
            ));
            continue;
        }
        let clocks: Vec<(&String, f64)> = row
            .iter()
            .filter(|(k, v)| is_clock(k) && **v != SENTINEL)
            .map(|(k, v)| (k, *v))
            .collect();
        if !clocks.is_empty() {
            let (hi_t, hi) = clocks.iter().fold(clocks[0], |m, c| if c.1 > m.1 { *c } else { m });
            let (lo_t, lo) = clocks.iter().fold(clocks[0], |m, c| if c.1 < m.1 { *c } else { m });
            out.push(format!(
                "{}: your average daily profile peaks around {hi_t} at {} mg/dL and is lowest around {lo_t} at {} mg/dL",
                key_period(key),
                fmt_num(hi),
                fmt_num(lo)
            ));
            continue;
        }
        let parts: Vec<String> = row
            .iter()
            .map(|(name, v)| {
                let (phrase, unit) = feature_phrase(name);
                if *v == SENTINEL {
                    format!("{phrase}: no data")
                } else {
                    format!("{phrase} {}{unit}", fmt_num(*v))
                }
            })
            .collect();
        out.push(format!("{}: {}", key_period(key), parts.join(", ")));
    }
    out
}

fn mentions_tir(payload: &Payload) -> bool {
    payload
        .values()
        .flat_map(|r| r.keys())
        .any(|k| k.to_ascii_lowercase().contains("tir"))
}

/// Deterministic answer text and cited period.
pub fn summarize(payload: &Payload) -> (String, Option<String>) {
    let period = cited_period(payload);
    let clauses = describe_payload(payload);
    let mut text = match &period {
        Some(p) => format!("Here is what your CGM data shows for {p}. "),
        None => String::from("Here is what your CGM data shows. "),
    };
    text.push_str(&clauses.join(". "));
    text.push('.');
    if mentions_tir(payload) {
        text.push_str(" For context, a common goal is at least 70% of the day within 70-180 mg/dL.");
    }
    (text, period)
}

pub fn insufficient_data_response(payload: &Payload) -> (String, Option<String>) {
    let period = cited_period(payload);
    let text = match &period {
        Some(p) => format!(
            "There is not enough CGM data for {p} to answer this. No usable readings were recorded for that period, so I can't compute these metrics."
        ),
        None => "There is not enough CGM data to answer this question.".to_string(),
    };
    (text, period)
}

pub fn refusal_text(rationale: &str) -> String {
    let reason = rationale.trim();
    let reason = if reason.is_empty() {
        "This question needs information that a glucose sensor does not record."
    } else {
        reason
    };
    format!(
        "I can't answer that from your CGM data alone. {reason} To look into it, I recommend reviewing those records with your healthcare provider or connecting that data source."
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn payload(key: &str, rows: &[(&str, f64)]) -> Payload {
        Payload::from([(key.to_string(), rows.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>())])
    }

    #[test]
    fn periods() {
        assert_eq!(key_period("(2024-01-01, 2024-01-07)"), "2024-01-01 to 2024-01-07");
        assert_eq!(key_period("(2024-02-29 04:00, 2024-02-29 06:00)"), "2024-02-29 04:00-06:00");
        assert_eq!(key_period("['2024-01-01', '2024-01-03']"), "2024-01-01, 2024-01-03");
        assert_eq!(
            key_period("(2024-01-01, 2024-01-07) 06:00-12:00"),
            "2024-01-01 to 2024-01-07, 06:00-12:00"
        );
        assert_eq!(key_period("2024-01-01 vs 2024-01-02"), "2024-01-01 vs 2024-01-02");
    }

    #[test]
    fn excursion_wording() {
        let p = payload("(2021-08-29 09:37:00, 2021-08-29 09:52:00)", &[("magnitude", 30.6), ("speed", 2.04)]);
        let (text, period) = summarize(&p);
        assert!(text.contains("30.6 mg/dL in 15 minutes"), "{text}");
        assert!(text.contains("09:37"));
        assert_eq!(period.unwrap(), "2021-08-29 09:37 to 09:52");
    }

    #[test]
    fn aggregate_wording() {
        let p = payload(
            "(2024-01-08, 2024-01-14)",
            &[("avg_TIR_sufficient_weartime", 72.0), ("days_sufficient_weartime", 4.0)],
        );
        let (text, period) = summarize(&p);
        assert_eq!(period.as_deref(), Some("2024-01-08 to 2024-01-14"));
        assert!(text.contains("average time in range on days with sufficient weartime 72%"), "{text}");
        assert!(text.contains("70%"));
        let (text, _) = insufficient_data_response(&payload("2024-01-01", &[("tir_pct", -1.0)]));
        assert!(text.contains("not enough CGM data for 2024-01-01"));
        assert!(refusal_text("I don't have access to your insulin logs.").contains("insulin logs"));
    }
}
