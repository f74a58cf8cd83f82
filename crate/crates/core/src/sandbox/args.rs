use chrono::NaiveDate;
use serde_json::{Map, Value};

use crate::aggregation::{Comparator, ExtremumMode, Stratum};
use crate::data::{ClockWindow, DateSelection};
use crate::metrics::Feature;

use super::ToolError;

/// Declared type of a tool parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// A date, a list of dates, a `{start, end}` range, or a date-key string.
    Dates,
    /// `HH:MM-HH:MM` clock window.
    Window,
    Feature,
    FeatureList,
    Number,
    Integer,
    Comparator,
    Mode,
    Stratum,
    Boolean,
    /// Identifier of an artifact produced by an earlier call.
    Artifact,
}

impl ParamKind {
    pub fn type_name(self) -> &'static str {
        match self {
            ParamKind::Dates => "dates",
            ParamKind::Window => "clock_window",
            ParamKind::Feature => "feature",
            ParamKind::FeatureList => "feature_list",
            ParamKind::Number => "number",
            ParamKind::Integer => "integer",
            ParamKind::Comparator => "comparator",
            ParamKind::Mode => "min|max|both",
            ParamKind::Stratum => "all|sufficient_weartime",
            ParamKind::Boolean => "boolean",
            ParamKind::Artifact => "artifact_id",
        }
    }

    pub(crate) fn check(self, name: &str, v: &Value) -> Result<(), ToolError> {
        match self {
            ParamKind::Dates => parse_dates(name, v).map(drop),
            ParamKind::Window => parse_window(name, v).map(drop),
            ParamKind::Feature => parse_feature(name, v).map(drop),
            ParamKind::FeatureList => match v {
                Value::Array(items) => items.iter().try_for_each(|f| parse_feature(name, f).map(drop)),
                other => parse_feature(name, other).map(drop),
            },
            ParamKind::Number => number(name, v).map(drop),
            ParamKind::Integer => integer(name, v).map(drop),
            ParamKind::Comparator => text(name, v)?
                .parse::<Comparator>()
                .map(drop)
                .map_err(|e| invalid(name, e.to_string())),
            ParamKind::Mode => parse_mode(name, v).map(drop),
            ParamKind::Stratum => parse_stratum(name, v).map(drop),
            ParamKind::Boolean => v.as_bool().map(drop).ok_or_else(|| invalid(name, "expected boolean")),
            ParamKind::Artifact => text(name, v).map(drop),
        }
    }
}

fn invalid(name: &str, reason: impl Into<String>) -> ToolError {
    ToolError::InvalidArgument {
        name: name.to_string(),
        reason: reason.into(),
    }
}

fn text<'a>(name: &str, v: &'a Value) -> Result<&'a str, ToolError> {
    v.as_str().ok_or_else(|| invalid(name, "expected string"))
}

fn number(name: &str, v: &Value) -> Result<f64, ToolError> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().trim_end_matches('%').trim().parse().ok(),
        _ => None,
    }
    .filter(|x: &f64| x.is_finite())
    .ok_or_else(|| invalid(name, "expected number"))
}

fn integer(name: &str, v: &Value) -> Result<u32, ToolError> {
    let x = number(name, v)?;
    if x.fract() != 0.0 || !(0.0..=f64::from(u32::MAX)).contains(&x) {
        return Err(invalid(name, "expected non-negative integer"));
    }
    Ok(x as u32)
}

fn parse_feature(name: &str, v: &Value) -> Result<Feature, ToolError> {
    let s = text(name, v)?;
    resolve_feature_name(s).ok_or_else(|| invalid(name, format!("unknown feature `{s}`")))
}

/// Accepts canonical feature names plus common short labels (`TIR`, `mean`).
pub fn resolve_feature_name(s: &str) -> Option<Feature> {
    let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
    if let Ok(f) = norm.parse() {
        return Some(f);
    }
    Some(match norm.as_str() {
        "tir" | "time_in_range" => Feature::TirPct,
        "tbr" | "time_below_range" => Feature::TbrPct,
        "tar" | "time_above_range" => Feature::TarPct,
        "mean" | "avg_glucose" | "average_glucose" | "mean_bg" => Feature::MeanGlucose,
        "std" | "sd" | "std_bg" => Feature::StdGlucose,
        "cv" | "gv" | "glycemic_variability" => Feature::CvPct,
        "a1c" | "est_a1c" | "estimated_a1c" => Feature::EstA1cPct,
        "gmi" => Feature::GmiPct,
        "min" | "min_bg" => Feature::MinGlucose,
        "max" | "max_bg" => Feature::MaxGlucose,
        "hypo" | "hypoglycemia_events" => Feature::HypoEvents,
        "hyper" | "hyperglycemia_events" => Feature::HyperEvents,
        "weartime" | "adherence" => Feature::WeartimePct,
        _ => return None,
    })
}

fn parse_mode(name: &str, v: &Value) -> Result<Option<ExtremumMode>, ToolError> {
    match text(name, v)?.trim().to_ascii_lowercase().as_str() {
        "min" | "lowest" => Ok(Some(ExtremumMode::Min)),
        "max" | "highest" => Ok(Some(ExtremumMode::Max)),
        "both" => Ok(None),
        other => Err(invalid(name, format!("unknown mode `{other}`"))),
    }
}

fn parse_stratum(name: &str, v: &Value) -> Result<Stratum, ToolError> {
    match text(name, v)?.trim() {
        "all" => Ok(Stratum::All),
        "sufficient_weartime" => Ok(Stratum::SufficientWeartime),
        other => Err(invalid(name, format!("unknown stratum `{other}`"))),
    }
}

fn parse_window(name: &str, v: &Value) -> Result<ClockWindow, ToolError> {
    let err = |e: crate::data::DataError| invalid(name, e.to_string());
    match v {
        Value::String(s) => ClockWindow::parse(s).map_err(err),
        Value::Object(m) => {
            let start = m.get("start").and_then(Value::as_str);
            let end = m.get("end").and_then(Value::as_str);
            match (start, end) {
                (Some(a), Some(b)) => ClockWindow::parse(&format!("{a}-{b}")).map_err(err),
                _ => Err(invalid(name, "window object needs `start` and `end`")),
            }
        }
        _ => Err(invalid(name, "expected clock window")),
    }
}

fn parse_date(name: &str, s: &str) -> Result<NaiveDate, ToolError> {
    let s = s.trim().trim_matches(|c| c == '\'' || c == '"');
    s.parse().map_err(|_| invalid(name, format!("bad date `{s}`")))
}

/// Parses a date argument in any accepted form into a selection without a
/// clock window.
pub fn parse_dates(name: &str, v: &Value) -> Result<DateSelection, ToolError> {
    let sel = match v {
        Value::String(s) => parse_date_string(name, s)?,
        Value::Array(items) => {
            let mut dates = Vec::new();
            for item in items {
                let s = text(name, item)?;
                dates.extend(parse_date_string(name, s)?.dates());
            }
            DateSelection::of_dates(dates)
        }
        Value::Object(m) => match (m.get("start"), m.get("end"), m.get("dates")) {
            (Some(a), Some(b), _) => DateSelection::range(
                parse_date(name, text(name, a)?)?,
                parse_date(name, text(name, b)?)?,
            ),
            (_, _, Some(list)) => parse_dates(name, list)?,
            _ => return Err(invalid(name, "date object needs `start`/`end` or `dates`")),
        },
        _ => return Err(invalid(name, "expected dates")),
    };
    sel.validate().map_err(|e| invalid(name, e.to_string()))?;
    Ok(sel)
}

fn parse_date_string(name: &str, s: &str) -> Result<DateSelection, ToolError> {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        let dates = inner
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| parse_date(name, p))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(DateSelection::of_dates(dates));
    }
    let inner = s.strip_prefix('(').and_then(|r| r.strip_suffix(')')).unwrap_or(s);
    for sep in [", ", " to ", "..", ","] {
        if let Some((a, b)) = inner.split_once(sep) {
            return Ok(DateSelection::range(parse_date(name, a)?, parse_date(name, b)?));
        }
    }
    Ok(DateSelection::of_dates(vec![parse_date(name, inner)?]))
}

/// Validated call arguments with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct Args(pub(crate) Map<String, Value>);

impl Args {
    pub fn new(map: Map<String, Value>) -> Self {
        Self(map)
    }

    pub fn raw(&self, name: &str) -> Option<&Value> {
        self.0.get(name).filter(|v| !v.is_null())
    }

    pub fn has(&self, name: &str) -> bool {
        self.raw(name).is_some()
    }

    /// Date selection from `name`, with the `window` argument applied if present.
    pub fn dates(&self, name: &str) -> Result<Option<DateSelection>, ToolError> {
        let Some(v) = self.raw(name) else {
            return Ok(None);
        };
        let mut sel = parse_dates(name, v)?;
        if let Some(w) = self.window()? {
            sel = sel.with_window(w);
        }
        Ok(Some(sel))
    }

    pub fn window(&self) -> Result<Option<ClockWindow>, ToolError> {
        self.raw("window").map(|v| parse_window("window", v)).transpose()
    }

    pub fn feature(&self, name: &str) -> Result<Feature, ToolError> {
        let v = self.raw(name).ok_or_else(|| ToolError::MissingArgument(name.to_string()))?;
        parse_feature(name, v)
    }

    pub fn features(&self, name: &str) -> Result<Option<Vec<Feature>>, ToolError> {
        match self.raw(name) {
            None => Ok(None),
            Some(Value::Array(items)) => items.iter().map(|f| parse_feature(name, f)).collect::<Result<_, _>>().map(Some),
            Some(other) => Ok(Some(vec![parse_feature(name, other)?])),
        }
    }

    pub fn number(&self, name: &str) -> Result<Option<f64>, ToolError> {
        self.raw(name).map(|v| number(name, v)).transpose()
    }

    pub fn integer(&self, name: &str) -> Result<Option<u32>, ToolError> {
        self.raw(name).map(|v| integer(name, v)).transpose()
    }

    pub fn boolean(&self, name: &str) -> Result<Option<bool>, ToolError> {
        self.raw(name)
            .map(|v| v.as_bool().ok_or_else(|| invalid(name, "expected boolean")))
            .transpose()
    }

    pub fn comparator(&self, name: &str) -> Result<Comparator, ToolError> {
        let v = self.raw(name).ok_or_else(|| ToolError::MissingArgument(name.to_string()))?;
        text(name, v)?.parse().map_err(|e: crate::aggregation::AggregationError| invalid(name, e.to_string()))
    }

    pub fn mode(&self, name: &str) -> Result<Option<ExtremumMode>, ToolError> {
        self.raw(name).map_or(Ok(None), |v| parse_mode(name, v))
    }

    pub fn stratum(&self, name: &str) -> Result<Stratum, ToolError> {
        self.raw(name).map_or(Ok(Stratum::All), |v| parse_stratum(name, v))
    }

    pub fn text(&self, name: &str) -> Result<Option<&str>, ToolError> {
        self.raw(name).map(|v| text(name, v)).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn date_forms() {
        let key = |v: Value| parse_dates("d", &v).unwrap().key();
        assert_eq!(key(json!("2024-01-06")), "2024-01-06");
        assert_eq!(key(json!("(2024-01-01, 2024-01-07)")), "(2024-01-01, 2024-01-07)");
        assert_eq!(key(json!({"start": "2024-01-01", "end": "2024-01-03"})), "(2024-01-01, 2024-01-03)");
        assert_eq!(key(json!("['2024-01-01', '2024-01-03']")), "['2024-01-01', '2024-01-03']");
        assert_eq!(key(json!(["2024-01-03", "2024-01-01"])), "['2024-01-01', '2024-01-03']");
        assert!(parse_dates("d", &json!("yesterday")).is_err());
        assert!(parse_dates("d", &json!([])).is_err());
        assert!(parse_dates("d", &json!(5)).is_err());
    }

    #[test]
    fn feature_aliases() {
        assert_eq!(resolve_feature_name("TIR"), Some(Feature::TirPct));
        assert_eq!(resolve_feature_name("mean_glucose"), Some(Feature::MeanGlucose));
        assert_eq!(resolve_feature_name("Time in range"), Some(Feature::TirPct));
        assert_eq!(resolve_feature_name("insulin"), None);
    }

    #[test]
    fn window_with_dates() {
        let a = Args::new(json!({"dates": "2024-02-29", "window": "04:00-06:00"}).as_object().unwrap().clone());
        assert_eq!(a.dates("dates").unwrap().unwrap().key(), "(2024-02-29 04:00, 2024-02-29 06:00)");
        assert_eq!(a.number("missing").unwrap(), None);
    }
}
