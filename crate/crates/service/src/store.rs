//! On-disk subject store: one canonical `<subject>.csv` per subject.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDateTime;
use serde::Serialize;

use cgmqa_core::data::{estimate_sampling_rate, load_cgm_csv, write_cgm_csv, CsvSchema, DataError};
use cgmqa_core::sandbox::LocalData;
use cgmqa_core::Series;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("data directory `{0}` does not exist or is not a directory")]
    MissingDir(String),
    #[error("invalid subject id `{0}`")]
    InvalidId(String),
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("subject `{subject}`: {source}")]
    Data {
        subject: String,
        #[source]
        source: DataError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Printed after ingestion: size, span, sampling rate and coverage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub subject_id: String,
    pub rows: usize,
    pub dropped_rows: usize,
    pub duplicate_rows: usize,
    pub first: NaiveDateTime,
    pub last: NaiveDateTime,
    pub rate_minutes: u32,
    /// Share of the ideal grid over the span with no reading.
    pub missing_pct: f64,
    /// An earlier file for the same id was overwritten.
    pub replaced: bool,
}

#[derive(Debug, Clone)]
pub struct SubjectStore {
    dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl SubjectStore {
    /// Opens an existing directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(StoreError::MissingDir(dir.display().to_string()));
        }
        Ok(Self { dir })
    }

    /// Opens `dir`, creating it first if needed.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, subject_id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(subject_id) {
            return Err(StoreError::InvalidId(subject_id.to_string()));
        }
        Ok(self.dir.join(format!("{subject_id}.csv")))
    }

    pub fn ids(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = std::fs::read_dir(&self.dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn load(&self, subject_id: &str) -> Result<Series, StoreError> {
        let path = self.path(subject_id)?;
        if !path.exists() {
            return Err(StoreError::UnknownSubject(subject_id.to_string()));
        }
        let schema = CsvSchema {
            subject_id: Some(subject_id.to_string()),
            ..Default::default()
        };
        load_cgm_csv(&path, &schema)
            .map(|r| r.series)
            .map_err(|source| StoreError::Data {
                subject: subject_id.to_string(),
                source,
            })
    }

    pub fn load_all(&self) -> Result<BTreeMap<String, Arc<LocalData>>, StoreError> {
        self.ids()?
            .into_iter()
            .map(|id| {
                let series = self.load(&id)?;
                Ok((id, Arc::new(LocalData::new(series))))
            })
            .collect()
    }

    /// Stores an already loaded series under `subject_id`.
    pub fn save(&self, subject_id: &str, series: &Series) -> Result<bool, StoreError> {
        let path = self.path(subject_id)?;
        let replaced = path.exists();
        write_cgm_csv(series, &path).map_err(|source| StoreError::Data {
            subject: subject_id.to_string(),
            source,
        })?;
        Ok(replaced)
    }

    /// Reads an arbitrary CGM export and stores its canonical form.
    pub fn ingest(&self, csv: &Path, subject_id: &str, schema: &CsvSchema) -> Result<IngestSummary, StoreError> {
        let data_err = |source| StoreError::Data {
            subject: subject_id.to_string(),
            source,
        };
        let schema = CsvSchema {
            subject_id: Some(subject_id.to_string()),
            ..schema.clone()
        };
        let report = load_cgm_csv::<f64>(csv, &schema).map_err(data_err)?;
        let series = report.series;
        let rate = estimate_sampling_rate(&series).map_err(data_err)?;
        let first = series.readings()[0].timestamp;
        let last = series.readings()[series.len() - 1].timestamp;
        let expected = ((last - first).num_minutes() / i64::from(rate) + 1) as f64;
        let missing_pct = (100.0 * (1.0 - series.len() as f64 / expected)).clamp(0.0, 100.0);
        let replaced = self.save(subject_id, &series)?;
        if replaced {
            tracing::warn!(subject = subject_id, "overwriting stored subject");
        }
        Ok(IngestSummary {
            subject_id: subject_id.to_string(),
            rows: series.len(),
            dropped_rows: report.dropped_rows,
            duplicate_rows: report.duplicate_rows,
            first,
            last,
            rate_minutes: rate,
            missing_pct,
            replaced,
        })
    }
}
