use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{DataError, GlucoseReading, GlucoseSeries, MAX_PLAUSIBLE_MG_DL};
use crate::scalar::Scalar;

pub const DEFAULT_TIMESTAMP_COLUMN: &str = "timestamp";
pub const DEFAULT_GLUCOSE_COLUMN: &str = "glucose_mg_dl";

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
];

/// Column-name hints for CSV ingestion. Unset names fall back to the defaults,
/// then to header auto-detection.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp_column: Option<String>,
    pub glucose_column: Option<String>,
    /// Subject id for the loaded series; defaults to the file stem.
    pub subject_id: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadReport<T> {
    pub series: GlucoseSeries<T>,
    /// Rows skipped for unparseable timestamps or implausible glucose values.
    pub dropped_rows: usize,
    /// Rows skipped because an earlier row had the same timestamp.
    pub duplicate_rows: usize,
}

/// Parses `YYYY-MM-DD HH:MM[:SS]` and ISO-8601 without offset.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn resolve_column(
    headers: &[String],
    explicit: Option<&str>,
    default: &str,
    role: &'static str,
    keywords: &[&str],
) -> Result<usize, DataError> {
    if let Some(name) = explicit {
        return headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()));
    }
    if let Some(i) = headers.iter().position(|h| h == default) {
        return Ok(i);
    }
    let candidates: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            let h = h.to_ascii_lowercase();
            keywords.iter().any(|k| h.contains(k))
        })
        .map(|(i, _)| i)
        .collect();
    match candidates.as_slice() {
        [one] => Ok(*one),
        _ => Err(DataError::AmbiguousColumns {
            role,
            candidates: candidates.iter().map(|&i| headers[i].clone()).collect(),
        }),
    }
}

/// Loads a CGM export. Rows with bad timestamps or non-positive, non-numeric
/// or implausible glucose are skipped and counted; duplicate timestamps keep
/// the first occurrence; the result is sorted ascending.
pub fn load_cgm_csv<T: Scalar>(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<LoadReport<T>, DataError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let ts_col = resolve_column(
        &headers,
        schema.timestamp_column.as_deref(),
        DEFAULT_TIMESTAMP_COLUMN,
        "timestamp",
        &["time", "date"],
    )?;
    let bg_col = resolve_column(
        &headers,
        schema.glucose_column.as_deref(),
        DEFAULT_GLUCOSE_COLUMN,
        "glucose",
        &["glucose", "bg", "sgv", "value"],
    )?;
    if ts_col == bg_col {
        return Err(DataError::AmbiguousColumns {
            role: "glucose",
            candidates: vec![headers[bg_col].clone()],
        });
    }

    let mut readings = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        let ts = record.get(ts_col).and_then(parse_timestamp);
        let value = record
            .get(bg_col)
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v > 0.0 && *v < MAX_PLAUSIBLE_MG_DL);
        match (ts, value) {
            (Some(timestamp), Some(v)) => readings.push(GlucoseReading {
                timestamp,
                value: T::lit(v),
            }),
            _ => dropped += 1,
        }
    }
    if readings.is_empty() {
        return Err(DataError::NoRows { dropped });
    }
    let subject_id = schema.subject_id.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "subject".to_string())
    });
    let (series, duplicate_rows) = GlucoseSeries::from_unsorted(subject_id, readings);
    Ok(LoadReport {
        series,
        dropped_rows: dropped,
        duplicate_rows,
    })
}

/// Writes the canonical two-column export read back by [`load_cgm_csv`].
pub fn write_cgm_csv<T: Scalar>(
    series: &GlucoseSeries<T>,
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([DEFAULT_TIMESTAMP_COLUMN, DEFAULT_GLUCOSE_COLUMN])?;
    for r in series.readings() {
        w.write_record([
            r.timestamp.format("%Y-%m-%d %H:%M:%S").to_string(),
            r.value.as_f64().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_rows() {
        let f = write("timestamp,glucose_mg_dl\n2024-01-01 00:00,100\n2024-01-01 00:05,110\n2024-01-01 00:10,105\n");
        let rep = load_cgm_csv::<f64>(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(rep.series.len(), 3);
        assert_eq!(rep.dropped_rows, 0);
        assert_eq!(super::super::estimate_sampling_rate(&rep.series).unwrap(), 5);
    }

    #[test]
    fn shuffled_rows_sort_identically() {
        let a = write("timestamp,glucose_mg_dl\n2024-01-01 00:00,100\n2024-01-01 00:05,110\n2024-01-01 00:10,105\n");
        let b = write("timestamp,glucose_mg_dl\n2024-01-01 00:10,105\n2024-01-01 00:00,100\n2024-01-01 00:05,110\n");
        let schema = CsvSchema {
            subject_id: Some("s".into()),
            ..Default::default()
        };
        let ra = load_cgm_csv::<f64>(a.path(), &schema).unwrap();
        let rb = load_cgm_csv::<f64>(b.path(), &schema).unwrap();
        assert_eq!(ra.series, rb.series);
    }

    #[test]
    fn bad_row_dropped_and_counted() {
        let mut s = String::from("timestamp,glucose_mg_dl\n");
        for m in 0..10 {
            s.push_str(&format!("2024-01-01 {:02}:{:02},{}\n", m / 6, (m % 6) * 10, 100 + m));
        }
        s.push_str("2024-01-01 00:05,abc\n");
        let f = write(&s);
        let rep = load_cgm_csv::<f64>(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(rep.series.len(), 10);
        assert_eq!(rep.dropped_rows, 1);
    }

    #[test]
    fn non_positive_and_bad_timestamps_dropped() {
        let f = write("timestamp,glucose_mg_dl\n2024-01-01T00:00:00,100\nnot-a-time,100\n2024-01-01 00:05,-4\n2024-01-01 00:10,0\n");
        let rep = load_cgm_csv::<f32>(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(rep.series.len(), 1);
        assert_eq!(rep.dropped_rows, 3);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            load_cgm_csv::<f64>("/no/such/file.csv", &CsvSchema::default()),
            Err(DataError::MissingFile(_))
        ));
        let f = write("timestamp,glucose_mg_dl\nbad,bad\n");
        assert!(matches!(
            load_cgm_csv::<f64>(f.path(), &CsvSchema::default()),
            Err(DataError::NoRows { dropped: 1 })
        ));
        let f = write("device_time,record_date,bg\n2024-01-01 00:00,2024-01-01,100\n");
        assert!(matches!(
            load_cgm_csv::<f64>(f.path(), &CsvSchema::default()),
            Err(DataError::AmbiguousColumns { role: "timestamp", .. })
        ));
        let hinted = CsvSchema {
            timestamp_column: Some("device_time".into()),
            ..Default::default()
        };
        assert_eq!(load_cgm_csv::<f64>(f.path(), &hinted).unwrap().series.len(), 1);
    }

    #[test]
    fn autodetects_single_candidates() {
        let f = write("EventDateTime,CGM Glucose Value\n2024-01-01 00:00,100\n2024-01-01 00:15,90\n");
        let rep = load_cgm_csv::<f64>(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(rep.series.len(), 2);
    }

    #[test]
    fn canonical_roundtrip() {
        let f = write("timestamp,glucose_mg_dl\n2024-01-01 00:00,100.5\n2024-01-01 00:05,110\n");
        let schema = CsvSchema {
            subject_id: Some("s".into()),
            ..Default::default()
        };
        let rep = load_cgm_csv::<f64>(f.path(), &schema).unwrap();
        let out = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        write_cgm_csv(&rep.series, out.path()).unwrap();
        let again = load_cgm_csv::<f64>(out.path(), &schema).unwrap();
        assert_eq!(again.series, rep.series);
    }
}
