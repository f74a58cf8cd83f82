//! Privacy filter for anything that crosses the local boundary.
//!
//! Two complementary scans: a structural scan over JSON payloads that rejects
//! long sequences of timestamped values, and a text scan that looks for raw
//! readings (timestamp followed by its value) inside prompts or responses.

use chrono::NaiveDateTime;
use serde_json::Value;
use thiserror::Error;

use crate::data::{parse_timestamp, GlucoseReading};
use crate::scalar::Scalar;

/// Finest aggregate granularity allowed out: one bin per 5 minutes of a day.
pub const DEFAULT_RAW_CAP: usize = 288;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("payload exposes {count} timestamped values at `{path}` (cap {cap})")]
pub struct PrivacyViolation {
    pub path: String,
    pub count: usize,
    pub cap: usize,
}

fn is_datetime(s: &str) -> bool {
    // date-only keys are daily aggregates, not readings
    s.len() > 10 && parse_timestamp(s).is_some()
}

fn is_timestamped_element(v: &Value) -> bool {
    match v {
        Value::Array(items) => {
            items.iter().any(|x| x.as_str().is_some_and(is_datetime))
                && items.iter().any(Value::is_number)
        }
        Value::Object(map) => {
            map.values().any(|x| x.as_str().is_some_and(is_datetime))
                && map.values().any(Value::is_number)
        }
        _ => false,
    }
}

/// Rejects any array with more than `cap` timestamped elements and any object
/// with more than `cap` datetime keys.
pub fn scan_payload(value: &Value, cap: usize) -> Result<(), PrivacyViolation> {
    scan_at(value, cap, &mut String::from("$"))
}

fn scan_at(value: &Value, cap: usize, path: &mut String) -> Result<(), PrivacyViolation> {
    let violation = |path: &str, count| PrivacyViolation {
        path: path.to_string(),
        count,
        cap,
    };
    match value {
        Value::Array(items) => {
            let count = items.iter().filter(|v| is_timestamped_element(v)).count();
            if count > cap {
                return Err(violation(path, count));
            }
            for (i, item) in items.iter().enumerate() {
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                scan_at(item, cap, path)?;
                path.truncate(len);
            }
        }
        Value::Object(map) => {
            let count = map.keys().filter(|k| is_datetime(k)).count();
            if count > cap {
                return Err(violation(path, count));
            }
            for (k, item) in map {
                let len = path.len();
                path.push('.');
                path.push_str(k);
                scan_at(item, cap, path)?;
                path.truncate(len);
            }
        }
        _ => {}
    }
    Ok(())
}

/// A raw reading found verbatim in text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextLeak {
    pub timestamp: NaiveDateTime,
    pub value: f64,
    pub offset: usize,
}

const STAMP_LEN: usize = 16; // YYYY-MM-DD HH:MM
const LOOKAHEAD: usize = 32;

fn stamp_at(bytes: &[u8], i: usize) -> bool {
    const SHAPE: &[u8; STAMP_LEN] = b"dddd-dd-dd?dd:dd";
    bytes.len() >= i + STAMP_LEN
        && SHAPE.iter().zip(&bytes[i..i + STAMP_LEN]).all(|(s, b)| match s {
            b'd' => b.is_ascii_digit(),
            b'?' => *b == b' ' || *b == b'T',
            other => other == b,
        })
}

/// Finds every place where a reading's timestamp (minute resolution) is
/// followed closely by that reading's value.
pub fn scan_text<T: Scalar>(text: &str, readings: &[GlucoseReading<T>]) -> Vec<TextLeak> {
    let by_minute: std::collections::HashMap<String, f64> = readings
        .iter()
        .map(|r| (r.timestamp.format("%Y-%m-%d %H:%M").to_string(), r.value.as_f64()))
        .collect();
    let bytes = text.as_bytes();
    let mut leaks = Vec::new();
    let mut i = 0;
    while i + STAMP_LEN <= bytes.len() {
        if !stamp_at(bytes, i) {
            i += 1;
            continue;
        }
        let mut key = text[i..i + STAMP_LEN].to_string();
        key.replace_range(10..11, " ");
        let mut j = i + STAMP_LEN;
        // skip optional :SS(.fff)
        if bytes.get(j) == Some(&b':') {
            j += 1;
            while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                j += 1;
            }
        }
        if let Some(&value) = by_minute.get(&key) {
            if let Some(found) = first_number(&text[j..(j + LOOKAHEAD).min(text.len())]) {
                if (found - value).abs() < 1e-6 {
                    leaks.push(TextLeak {
                        timestamp: parse_timestamp(&key).expect("matched shape"),
                        value,
                        offset: i,
                    });
                }
            }
        }
        i = j;
    }
    leaks
}

fn first_number(s: &str) -> Option<f64> {
    let start = s.find(|c: char| c.is_ascii_digit())?;
    let rest = &s[start..];
    let end = rest
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(rest.len());
    rest[..end].trim_end_matches('.').parse().ok()
}
