//! Non-CGM data sources (insulin, carbohydrates, ...) plugged in as extra
//! executors with namespaced tool names.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDateTime;

use crate::data::{parse_timestamp, DataError};
use crate::scalar::SENTINEL;

use super::{Args, ParamKind, ParamSpec, Payload, SandboxError, ToolError, ToolOutput, ToolRegistry, ToolSpec};

/// Timestamped amounts for one modality (insulin units, grams of carbs, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub modality: String,
    pub unit: String,
    pub entries: Vec<(NaiveDateTime, f64)>,
}

/// Reads a `timestamp,amount` CSV.
pub fn load_event_csv(path: &Path, modality: &str, unit: &str) -> Result<EventLog, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let (ti, ai) = (col("timestamp")?, col("amount")?);
    let mut entries = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let ts = row.get(ti).and_then(parse_timestamp);
        let amount = row.get(ai).and_then(|s| s.parse::<f64>().ok()).filter(|a| a.is_finite() && *a >= 0.0);
        if let (Some(ts), Some(amount)) = (ts, amount) {
            entries.push((ts, amount));
        }
    }
    entries.sort_by_key(|e| e.0);
    Ok(EventLog {
        modality: modality.to_string(),
        unit: unit.to_string(),
        entries,
    })
}

/// Contributes tools for one data modality. Tool names must start with
/// `"{modality}."`.
pub trait ModalityExecutor {
    fn modality(&self) -> &str;
    fn tools(&self) -> Vec<(ToolSpec, super::Executor)>;

    fn register(&self, registry: &mut ToolRegistry) -> Result<(), SandboxError> {
        let prefix = format!("{}.", self.modality());
        for (spec, exec) in self.tools() {
            if !spec.name.starts_with(&prefix) {
                return Err(SandboxError::BadNamespace {
                    name: spec.name,
                    modality: self.modality().to_string(),
                });
            }
            registry.register(spec, exec)?;
        }
        Ok(())
    }
}

/// Per-day sum of a modality's amounts. Days without a log report `-1`.
#[derive(Debug, Clone)]
pub struct DailyTotalExecutor {
    pub modality: String,
    pub tool: String,
    pub feature: String,
}

impl DailyTotalExecutor {
    pub fn insulin() -> Self {
        Self {
            modality: "insulin".into(),
            tool: "insulin.daily_insulin_total".into(),
            feature: "total_insulin_units".into(),
        }
    }

    pub fn carbs() -> Self {
        Self {
            modality: "carbs".into(),
            tool: "carbs.daily_carb_total".into(),
            feature: "total_carbs_g".into(),
        }
    }
}

impl ModalityExecutor for DailyTotalExecutor {
    fn modality(&self) -> &str {
        &self.modality
    }

    fn tools(&self) -> Vec<(ToolSpec, super::Executor)> {
        let spec = ToolSpec {
            name: self.tool.clone(),
            description: format!("Daily total of logged {} amounts.", self.modality),
            params: vec![ParamSpec::required("dates", ParamKind::Dates, "dates to total")],
        };
        let modality = self.modality.clone();
        let feature = self.feature.clone();
        let exec = move |args: &Args, ctx: &mut super::ToolContext<'_>| -> Result<ToolOutput, ToolError> {
            let sel = args.dates("dates")?.ok_or_else(|| ToolError::MissingArgument("dates".into()))?;
            let log = ctx.data.modalities.get(&modality);
            let mut totals: BTreeMap<_, f64> = BTreeMap::new();
            if let Some(log) = log {
                for (ts, amount) in &log.entries {
                    *totals.entry(ts.date()).or_default() += amount;
                }
            }
            let payload: Payload = sel
                .dates()
                .into_iter()
                .map(|d| {
                    let v = match log {
                        None => SENTINEL,
                        Some(_) => totals.get(&d).copied().unwrap_or(0.0),
                    };
                    (sel.date_key(d), BTreeMap::from([(feature.clone(), v)]))
                })
                .collect();
            Ok(ToolOutput {
                payload,
                ..ToolOutput::default()
            })
        };
        vec![(spec, Arc::new(exec))]
    }
}
