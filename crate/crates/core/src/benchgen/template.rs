use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BenchError, Category};
use crate::sandbox::{resolve_feature_name, ToolCall, ToolRegistry};

/// Out-of-scope phrases used when a template does not list its own.
const DEFAULT_OUT_OF_SCOPE: [(&str, &str); 6] = [
    ("insulin dose", "insulin"),
    ("hours of sleep", "sleep"),
    ("step count", "activity"),
    ("carb intake", "carbs"),
    ("resting heart rate", "heart rate"),
    ("medication schedule", "medication"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub text: String,
    pub arg: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfScopeOption {
    pub text: String,
    pub modality: String,
}

/// Where a placeholder's values come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamDomain {
    Date,
    DateRange {
        min_days: u32,
        max_days: u32,
        /// Name of an earlier date parameter this range must start after.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        after: Option<String>,
    },
    DateList {
        min_count: u32,
        max_count: u32,
        /// Width of the span the dates are drawn from.
        within_days: u32,
    },
    /// A Saturday and the following Sunday.
    Weekend,
    /// Monday through Sunday.
    Week,
    Window {
        min_hours: u32,
        max_hours: u32,
    },
    Feature {
        choices: Vec<String>,
    },
    Number {
        min: f64,
        max: f64,
        step: f64,
    },
    Comparator {
        choices: Vec<String>,
    },
    Choice {
        options: Vec<ChoiceOption>,
    },
    OutOfScope {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        options: Vec<OutOfScopeOption>,
    },
}

impl ParamDomain {
    fn is_date(&self) -> bool {
        matches!(
            self,
            Self::Date | Self::DateRange { .. } | Self::DateList { .. } | Self::Weekend | Self::Week
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub domain: ParamDomain,
}

/// Procedure step with `{name}` placeholders in its arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTemplate {
    pub tool: String,
    #[serde(default)]
    pub arguments: Value,
}

/// How the question's "today" is placed relative to its dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRule {
    /// Date parameter to count from; defaults to the latest drawn date.
    #[serde(default)]
    pub anchor: Option<String>,
    pub min_offset_days: u32,
    pub max_offset_days: u32,
    #[serde(default = "default_hour")]
    pub hour: u32,
}

fn default_hour() -> u32 {
    21
}

impl Default for ReferenceRule {
    fn default() -> Self {
        Self {
            anchor: None,
            min_offset_days: 1,
            max_offset_days: 7,
            hour: default_hour(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub id: String,
    pub category: Category,
    pub text: String,
    /// Standardized rewrite expected from the input processor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<String>,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub procedure: Vec<StepTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_features: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_modality: Option<String>,
    /// The unobserved behavior a proxy template stands in for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_of: Option<String>,
    /// Unanswerable items built by pairing a CGM metric with an out-of-scope one.
    #[serde(default)]
    pub injected: bool,
    #[serde(default)]
    pub reference: ReferenceRule,
}

/// Names inside `{...}` in order of appearance.
pub fn placeholders(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(open) = rest.find('{') {
        let tail = &rest[open + 1..];
        match tail.find('}') {
            Some(close) => {
                let name = &tail[..close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    out.push(name.to_string());
                }
                rest = &tail[close + 1..];
            }
            None => break,
        }
    }
    out
}

fn value_placeholders(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::String(s) => out.extend(placeholders(s)),
        Value::Array(items) => items.iter().for_each(|i| value_placeholders(i, out)),
        Value::Object(m) => m.values().for_each(|i| value_placeholders(i, out)),
        _ => {}
    }
}

impl QuestionTemplate {
    fn mismatch(&self, msg: impl Into<String>) -> BenchError {
        BenchError::Template {
            id: self.id.clone(),
            message: msg.into(),
        }
    }

    pub fn procedure_placeholders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for step in &self.procedure {
            value_placeholders(&step.arguments, &mut out);
        }
        out
    }

    /// Checks placeholders against parameters, domains against the feature
    /// vocabulary, and tool names against `registry` when given.
    pub fn validate(&self, registry: Option<&ToolRegistry>) -> Result<(), BenchError> {
        let declared: BTreeMap<&str, &ParamDomain> =
            self.params.iter().map(|p| (p.name.as_str(), &p.domain)).collect();
        if declared.len() != self.params.len() {
            return Err(self.mismatch("duplicate parameter name"));
        }
        let text: BTreeSet<String> = placeholders(&self.text).into_iter().collect();
        let refined: BTreeSet<String> = self.refined.as_deref().map(placeholders).unwrap_or_default().into_iter().collect();
        let procedure = self.procedure_placeholders();
        for name in text.iter().chain(&refined).chain(&procedure) {
            if !declared.contains_key(name.as_str()) {
                return Err(self.mismatch(format!("placeholder `{name}` has no parameter")));
            }
        }
        let unanswerable = self.category == Category::Unanswerable;
        if unanswerable != self.procedure.is_empty() {
            return Err(self.mismatch("unanswerable templates must have an empty procedure and only they may"));
        }
        if unanswerable {
            if let Some(p) = self.params.iter().find(|p| !text.contains(&p.name)) {
                return Err(self.mismatch(format!("parameter `{}` unused in text", p.name)));
            }
            let oos = self.params.iter().any(|p| matches!(p.domain, ParamDomain::OutOfScope { .. }));
            if self.missing_modality.is_none() && !oos {
                return Err(self.mismatch("unanswerable template names no missing modality"));
            }
        } else {
            if let Some(n) = text.iter().find(|n| !procedure.contains(*n)) {
                return Err(self.mismatch(format!("text placeholder `{n}` unused in procedure")));
            }
            // relative phrasings ("last weekend") carry their dates only in the rewrite
            if let Some(n) = procedure.iter().find(|n| !text.contains(*n) && !refined.contains(*n)) {
                return Err(self.mismatch(format!("procedure placeholder `{n}` absent from text and rewrite")));
            }
            if self.injected {
                return Err(self.mismatch("only unanswerable templates may be injected"));
            }
        }
        if self.category == Category::Proxy && self.proxy_of.is_none() {
            return Err(self.mismatch("proxy template must name what it stands in for"));
        }
        for p in &self.params {
            self.validate_domain(p, &declared)?;
        }
        if let Some(anchor) = &self.reference.anchor {
            if !declared.get(anchor.as_str()).is_some_and(|d| d.is_date()) {
                return Err(self.mismatch(format!("reference anchor `{anchor}` is not a date parameter")));
            }
        }
        let r = &self.reference;
        if r.min_offset_days > r.max_offset_days || r.hour > 23 {
            return Err(self.mismatch("bad reference rule"));
        }
        if let Some(reg) = registry {
            if let Some(step) = self.procedure.iter().find(|s| !reg.contains(&s.tool)) {
                return Err(self.mismatch(format!("unknown tool `{}`", step.tool)));
            }
        }
        if let Some(features) = &self.required_features {
            if let Some(f) = features.iter().find(|f| resolve_feature_name(f).is_none()) {
                return Err(self.mismatch(format!("unknown required feature `{f}`")));
            }
        }
        Ok(())
    }

    fn validate_domain(&self, p: &ParamSpec, declared: &BTreeMap<&str, &ParamDomain>) -> Result<(), BenchError> {
        let bad = |m: &str| Err(self.mismatch(format!("parameter `{}`: {m}", p.name)));
        match &p.domain {
            ParamDomain::DateRange { min_days, max_days, after } => {
                if *min_days == 0 || min_days > max_days {
                    return bad("empty day-count range");
                }
                if let Some(a) = after {
                    let earlier = self.params.iter().position(|q| &q.name == a);
                    let here = self.params.iter().position(|q| q.name == p.name);
                    if !(earlier < here && declared.get(a.as_str()).is_some_and(|d| d.is_date())) {
                        return bad("`after` must name an earlier date parameter");
                    }
                }
            }
            ParamDomain::DateList { min_count, max_count, within_days } => {
                if *min_count == 0 || min_count > max_count || max_count > within_days {
                    return bad("inconsistent list size");
                }
            }
            ParamDomain::Window { min_hours, max_hours } => {
                if *min_hours == 0 || min_hours > max_hours || *max_hours > 23 {
                    return bad("window hours must lie in 1..=23");
                }
            }
            ParamDomain::Feature { choices } => {
                if choices.is_empty() {
                    return bad("no feature choices");
                }
                if let Some(c) = choices.iter().find(|c| resolve_feature_name(c).is_none()) {
                    return bad(&format!("`{c}` is not a CGM feature"));
                }
            }
            ParamDomain::Number { min, max, step } => {
                if !(step.is_finite() && *step > 0.0 && min <= max) {
                    return bad("number domain needs min <= max and a positive step");
                }
            }
            ParamDomain::Comparator { choices } => {
                if choices.is_empty() || choices.iter().any(|c| comparator_text(c).is_none()) {
                    return bad("unknown comparator");
                }
            }
            ParamDomain::Choice { options } if options.is_empty() => return bad("no options"),
            _ => {}
        }
        Ok(())
    }
}

fn comparator_text(c: &str) -> Option<&'static str> {
    Some(match c {
        ">" => "above",
        ">=" => "at or above",
        "<" => "below",
        "<=" => "at or below",
        "==" => "exactly",
        _ => return None,
    })
}

/// One drawn parameter: the wording for question text and the tool argument.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamValue {
    pub text: String,
    pub arg: Value,
    pub dates: Vec<NaiveDate>,
    pub modality: Option<String>,
}

impl ParamValue {
    fn plain(text: String, arg: Value) -> Self {
        Self {
            text,
            arg,
            dates: Vec::new(),
            modality: None,
        }
    }

    fn dates(dates: Vec<NaiveDate>, text: String, arg: String) -> Self {
        Self {
            text,
            arg: Value::String(arg),
            dates,
            modality: None,
        }
    }

    fn arg_string(&self) -> String {
        match &self.arg {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

/// Recorded date range of a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl Span {
    pub fn days(&self) -> u32 {
        (self.last - self.first).num_days() as u32 + 1
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.first <= d && d <= self.last
    }
}

fn add(d: NaiveDate, n: u32) -> NaiveDate {
    d + Days::new(u64::from(n))
}

fn range_value(a: NaiveDate, b: NaiveDate) -> ParamValue {
    let dates: Vec<NaiveDate> = a.iter_days().take_while(|d| *d <= b).collect();
    if a == b {
        ParamValue::dates(dates, a.to_string(), a.to_string())
    } else {
        ParamValue::dates(dates, format!("{a} to {b}"), format!("({a}, {b})"))
    }
}

fn fmt_number(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn feature_text(name: &str) -> String {
    resolve_feature_name(name).map_or_else(|| name.to_string(), |f| f.display_name().to_string())
}

/// A draw that failed for this attempt only; another attempt may succeed.
pub(super) struct Retry;

/// Draws one value. `earlier` holds parameters drawn before this one.
pub(super) fn draw<R: Rng>(
    domain: &ParamDomain,
    span: Span,
    earlier: &BTreeMap<String, ParamValue>,
    rng: &mut R,
) -> Result<ParamValue, Retry> {
    let total = span.days();
    Ok(match domain {
        ParamDomain::Date => {
            let d = add(span.first, rng.random_range(0..total));
            ParamValue::dates(vec![d], d.to_string(), d.to_string())
        }
        ParamDomain::DateRange { min_days, max_days, after } => {
            let lo = match after {
                Some(name) => {
                    let prev = earlier.get(name).and_then(|p| p.dates.last()).ok_or(Retry)?;
                    prev.succ_opt().ok_or(Retry)?
                }
                None => span.first,
            };
            if lo > span.last {
                return Err(Retry);
            }
            let room = (span.last - lo).num_days() as u32 + 1;
            if room < *min_days {
                return Err(Retry);
            }
            let len = rng.random_range(*min_days..=(*max_days).min(room));
            let start = add(lo, rng.random_range(0..=room - len));
            range_value(start, add(start, len - 1))
        }
        ParamDomain::DateList { min_count, max_count, within_days } => {
            let width = (*within_days).min(total);
            if width < *min_count {
                return Err(Retry);
            }
            let k = rng.random_range(*min_count..=(*max_count).min(width));
            let base = add(span.first, rng.random_range(0..=total - width));
            let mut offsets: Vec<u32> = rand::seq::index::sample(rng, width as usize, k as usize)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            offsets.sort_unstable();
            let dates: Vec<NaiveDate> = offsets.into_iter().map(|o| add(base, o)).collect();
            let strs: Vec<String> = dates.iter().map(NaiveDate::to_string).collect();
            let text = match strs.split_last() {
                Some((last, rest)) if !rest.is_empty() => format!("{} and {last}", rest.join(", ")),
                _ => strs.join(""),
            };
            let arg = format!("[{}]", strs.iter().map(|s| format!("'{s}'")).collect::<Vec<_>>().join(", "));
            ParamValue::dates(dates, text, arg)
        }
        ParamDomain::Weekend | ParamDomain::Week => {
            let (start_day, len) = if matches!(domain, ParamDomain::Weekend) {
                (Weekday::Sat, 2)
            } else {
                (Weekday::Mon, 7)
            };
            let starts: Vec<NaiveDate> = span
                .first
                .iter_days()
                .take_while(|d| add(*d, len - 1) <= span.last)
                .filter(|d| d.weekday() == start_day)
                .collect();
            let start = *starts.choose(rng).ok_or(Retry)?;
            range_value(start, add(start, len - 1))
        }
        ParamDomain::Window { min_hours, max_hours } => {
            let h = rng.random_range(*min_hours..=*max_hours);
            let start = rng.random_range(0..=23 - h);
            ParamValue::plain(
                format!("{start:02}:00 to {:02}:00", start + h),
                Value::String(format!("{start:02}:00-{:02}:00", start + h)),
            )
        }
        ParamDomain::Feature { choices } => {
            let c = choices.choose(rng).ok_or(Retry)?;
            let canonical = resolve_feature_name(c).map_or_else(|| c.clone(), |f| f.as_str().to_string());
            ParamValue::plain(feature_text(c), Value::String(canonical))
        }
        ParamDomain::Number { min, max, step } => {
            let steps = ((max - min) / step).floor() as u64;
            let x = min + step * rng.random_range(0..=steps) as f64;
            ParamValue::plain(fmt_number(x), serde_json::json!(x))
        }
        ParamDomain::Comparator { choices } => {
            let c = choices.choose(rng).ok_or(Retry)?;
            ParamValue::plain(comparator_text(c).unwrap_or(c).to_string(), Value::String(c.clone()))
        }
        ParamDomain::Choice { options } => {
            let o = options.choose(rng).ok_or(Retry)?;
            ParamValue::plain(o.text.clone(), o.arg.clone())
        }
        ParamDomain::OutOfScope { options } => {
            let (text, modality) = if options.is_empty() {
                let (t, m) = DEFAULT_OUT_OF_SCOPE.choose(rng).ok_or(Retry)?;
                (t.to_string(), m.to_string())
            } else {
                let o = options.choose(rng).ok_or(Retry)?;
                (o.text.clone(), o.modality.clone())
            };
            ParamValue {
                text: text.clone(),
                arg: Value::String(text),
                dates: Vec::new(),
                modality: Some(modality),
            }
        }
    })
}

/// Replaces `{name}` in prose with the parameter's wording.
pub fn fill_text(pattern: &str, values: &BTreeMap<String, ParamValue>) -> String {
    let mut out = pattern.to_string();
    for (name, v) in values {
        out = out.replace(&format!("{{{name}}}"), &v.text);
    }
    out
}

/// Replaces placeholders in arguments. A string that is exactly `{name}`
/// takes the argument value with its JSON type.
pub fn fill_value(v: &Value, values: &BTreeMap<String, ParamValue>) -> Value {
    match v {
        Value::String(s) => {
            if let Some(name) = s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                if let Some(p) = values.get(name) {
                    return p.arg.clone();
                }
            }
            let mut out = s.clone();
            for (name, p) in values {
                out = out.replace(&format!("{{{name}}}"), &p.arg_string());
            }
            Value::String(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(|i| fill_value(i, values)).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, i)| (k.clone(), fill_value(i, values))).collect()),
        other => other.clone(),
    }
}

pub fn fill_procedure(steps: &[StepTemplate], values: &BTreeMap<String, ParamValue>) -> Vec<ToolCall> {
    steps
        .iter()
        .map(|s| ToolCall::new(s.tool.clone(), fill_value(&s.arguments, values)))
        .collect()
}
