//! Offline rule-based backend: keyword intent detection over the temporal
//! resolver. Good enough for demos and the chat UI without a model server.

use chrono::NaiveDate;
use serde_json::{json, Value};

use super::scripted::{summarize_context, tool_sequence};
use super::{BackendError, CompletionRequest, Layer, LlmBackend};
use crate::aggregation::Comparator;
use crate::data::{ClockWindow, DateSelection, DateSet};
use crate::metrics::Feature;
use crate::sandbox::{Payload, ToolCall};
use crate::scalar::SENTINEL;
use crate::temporal::{contains_word, ResolvedTime, TemporalResolver};

/// Data a glucose sensor does not record: (keywords, description, modality
/// name when an executor for it may be registered).
const OUT_OF_SCOPE: &[(&[&str], &str, Option<&str>)] = &[
    (&["insulin", "bolus", "boluses", "basal"], "insulin logs", Some("insulin")),
    (&["carb", "carbs", "carbohydrate", "carbohydrates", "meal", "meals", "food", "ate", "eating"], "meal and carbohydrate logs", Some("carbs")),
    (&["sleep", "slept"], "sleep data", None),
    (&["steps", "exercise", "workout", "walk", "walking", "run", "running", "activity"], "activity data", None),
    (&["heart rate", "pulse"], "heart-rate data", None),
    (&["medication", "metformin", "pill", "pills"], "medication records", None),
    (&["stress", "mood"], "mood and stress records", None),
    (&["weight", "bmi"], "weight records", None),
];

const FEATURE_WORDS: &[(&[&str], Feature)] = &[
    (&["time in range", "tir", "in range"], Feature::TirPct),
    (&["time below range", "tbr", "below range"], Feature::TbrPct),
    (&["time above range", "tar", "above range"], Feature::TarPct),
    (&["average glucose", "mean glucose", "avg glucose", "average blood sugar", "average bg", "mean bg"], Feature::MeanGlucose),
    (&["standard deviation", "sd", "std"], Feature::StdGlucose),
    (&["variability", "cv", "coefficient of variation"], Feature::CvPct),
    (&["a1c", "hba1c"], Feature::EstA1cPct),
    (&["gmi", "glucose management indicator"], Feature::GmiPct),
    (&["lowest glucose", "minimum glucose", "min glucose"], Feature::MinGlucose),
    (&["highest glucose", "maximum glucose", "max glucose", "peak glucose"], Feature::MaxGlucose),
    (&["hypoglycemia", "hypo", "hypos", "lows"], Feature::HypoEvents),
    (&["hyperglycemia", "hyper", "hypers", "highs"], Feature::HyperEvents),
    (&["weartime", "wear time", "adherence"], Feature::WeartimePct),
];

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Retrieval,
    Count { comparator: Comparator, threshold: f64 },
    Compare { other: DateSelection },
    Extremum { highest: bool },
    Excursion,
    Plot,
    Modality { modality: String, feature: String },
}

#[derive(Debug, Clone)]
struct Intent {
    shape: Shape,
    selection: DateSelection,
    features: Vec<Feature>,
}

enum Understanding {
    Answerable(Vec<Intent>),
    Missing { what: &'static str, modality: Option<&'static str> },
}

fn detect_features(lower: &str) -> Vec<Feature> {
    let mut out: Vec<Feature> = Vec::new();
    for (words, f) in FEATURE_WORDS {
        let hit = words.iter().any(|w| contains_word(lower, w)) || lower.contains(f.as_str());
        if hit && !out.contains(f) {
            out.push(*f);
        }
    }
    if out.contains(&Feature::MinGlucose) || out.contains(&Feature::MaxGlucose) {
        out.retain(|f| !matches!(f, Feature::HypoEvents | Feature::HyperEvents));
    }
    out
}

fn first_number_after(lower: &str, from: usize) -> Option<f64> {
    let rest = &lower[from..];
    for (i, c) in rest.char_indices() {
        if c.is_ascii_digit() {
            let end = rest[i..]
                .find(|ch: char| !(ch.is_ascii_digit() || ch == '.'))
                .map_or(rest.len(), |e| i + e);
            let next = rest[end..].chars().next();
            if matches!(next, Some(':') | Some('-')) {
                return None;
            }
            return rest[i..end].trim_end_matches('.').parse().ok();
        }
    }
    None
}

fn detect_condition(lower: &str) -> Option<(Comparator, f64)> {
    const WORDS: &[(&str, Comparator)] = &[
        (">=", Comparator::Ge),
        ("<=", Comparator::Le),
        ("at least", Comparator::Ge),
        ("at most", Comparator::Le),
        ("more than", Comparator::Gt),
        ("greater than", Comparator::Gt),
        ("less than", Comparator::Lt),
        ("fewer than", Comparator::Lt),
        ("above", Comparator::Gt),
        ("over", Comparator::Gt),
        ("below", Comparator::Lt),
        ("under", Comparator::Lt),
        ("exactly", Comparator::Eq),
        ("==", Comparator::Eq),
        (">", Comparator::Gt),
        ("<", Comparator::Lt),
        ("=", Comparator::Eq),
    ];
    WORDS.iter().find_map(|(w, c)| {
        lower
            .match_indices(w)
            .find_map(|(i, _)| first_number_after(lower, i + w.len()).map(|n| (*c, n)))
    })
}

fn split_comparison(text: &str) -> Option<(String, String)> {
    let lower = text.to_lowercase();
    for sep in [" versus ", " vs. ", " vs ", " compared to ", " compared with "] {
        if let Some(i) = lower.find(sep) {
            return Some((text[..i].to_string(), text[i + sep.len()..].to_string()));
        }
    }
    let b = lower.find(" between ")?;
    let tail = &lower[b + 9..];
    let a = tail.rfind(" and ")?;
    Some((text[..b + 9 + a].to_string(), text[b + 9 + a + 5..].to_string()))
}

fn reference_from(text: &str) -> Option<NaiveDate> {
    let rest = text.strip_prefix("Today is ")?;
    rest.get(..10)?.parse().ok()
}

struct Parser<'a> {
    resolver: &'a TemporalResolver,
    reference: NaiveDate,
}

impl Parser<'_> {
    fn resolve(&self, text: &str) -> ResolvedTime {
        self.resolver.resolve(text, self.reference)
    }

    fn selection(&self, t: &ResolvedTime) -> DateSelection {
        t.windowed_selection()
            .unwrap_or_else(|| {
                let s = DateSelection::of_dates(vec![self.reference]);
                match t.window {
                    Some(w) => s.with_window(w),
                    None => s,
                }
            })
    }

    fn understand(&self, text: &str, modalities: &[String]) -> Understanding {
        let text = match text.find("User Question: ") {
            Some(i) if reference_from(text).is_some() => &text[i + 15..],
            _ => text,
        };
        let lower = text.to_lowercase();
        for (words, what, modality) in OUT_OF_SCOPE {
            if words.iter().any(|w| contains_word(&lower, w)) {
                match modality {
                    Some(m) if modalities.iter().any(|x| x == m) => {
                        let feature = if *m == "insulin" { "total_insulin_units" } else { "total_carbs_g" };
                        let sel = self.selection(&self.resolve(text));
                        return Understanding::Answerable(vec![Intent {
                            shape: Shape::Modality {
                                modality: m.to_string(),
                                feature: feature.into(),
                            },
                            selection: sel,
                            features: Vec::new(),
                        }]);
                    }
                    _ => return Understanding::Missing { what, modality: *modality },
                }
            }
        }
        let mut features = detect_features(&lower);
        let wants_compare = lower.contains("compare") || lower.contains(" vs") || lower.contains("versus");
        if lower.contains("separately") {
            if let Some((a, b)) = split_comparison(text) {
                let f = if features.is_empty() { vec![Feature::MeanGlucose] } else { features };
                let one = |t: &str| Intent {
                    shape: Shape::Retrieval,
                    selection: self.selection(&self.resolve(t)),
                    features: f.clone(),
                };
                return Understanding::Answerable(vec![one(&a), one(&b)]);
            }
        }
        if wants_compare {
            if let Some((a, b)) = split_comparison(text) {
                let (ta, tb) = (self.resolve(&a), self.resolve(&b));
                if ta.selection.is_some() && tb.selection.is_some() {
                    if features.is_empty() {
                        features.push(Feature::TirPct);
                    }
                    return Understanding::Answerable(vec![Intent {
                        shape: Shape::Compare {
                            other: self.selection(&tb),
                        },
                        selection: self.selection(&ta),
                        features: features[..1].to_vec(),
                    }]);
                }
            }
        }
        let time = self.resolve(text);
        let selection = self.selection(&time);
        let shape = if lower.contains("excursion") || lower.contains("spike") || lower.contains("rapid") {
            Shape::Excursion
        } else if lower.contains("plot") || lower.contains("trend") || lower.contains("profile") || lower.contains("chart") {
            Shape::Plot
        } else if lower.contains("how many days") || lower.contains("number of days") {
            match detect_condition(&lower) {
                Some((comparator, threshold)) => Shape::Count { comparator, threshold },
                None => Shape::Retrieval,
            }
        } else if lower.contains("which day") || lower.contains("what day") {
            Shape::Extremum {
                highest: !(lower.contains("lowest") || lower.contains("least") || lower.contains("worst")),
            }
        } else {
            Shape::Retrieval
        };
        if features.is_empty() {
            // intent-ambiguous questions ("how was my glucose") get the default pair
            features = match shape {
                Shape::Count { .. } | Shape::Extremum { .. } => vec![Feature::TirPct],
                _ => vec![Feature::TirPct, Feature::MeanGlucose],
            };
        }
        Understanding::Answerable(vec![Intent {
            shape,
            selection,
            features,
        }])
    }
}

fn dates_text(sel: &DateSelection) -> String {
    let base = match &sel.set {
        DateSet::Range { start, end } if start != end => format!("{start} to {end}"),
        _ => {
            let d: Vec<String> = sel.dates().iter().map(ToString::to_string).collect();
            match d.as_slice() {
                [one] => one.clone(),
                [init @ .., last] => format!("{} and {last}", init.join(", ")),
                [] => String::new(),
            }
        }
    };
    match sel.window {
        Some(w) => format!("{base} between {} and {}", w.start_label(), w.end_label()),
        None => base,
    }
}

fn labels(features: &[Feature]) -> String {
    features.iter().map(|f| f.label()).collect::<Vec<_>>().join(" and ")
}

fn comparator_text(c: Comparator) -> &'static str {
    match c {
        Comparator::Lt => "<",
        Comparator::Le => "<=",
        Comparator::Eq => "==",
        Comparator::Ge => ">=",
        Comparator::Gt => ">",
    }
}

impl Intent {
    fn question(&self) -> String {
        let dates = dates_text(&self.selection);
        let fl = labels(&self.features);
        match &self.shape {
            Shape::Retrieval => {
                let weartime = if self.features.contains(&Feature::WeartimePct) { "" } else { " and CGM weartime" };
                format!("What's my {fl}{weartime} on {dates}?")
            }
            Shape::Count { comparator, threshold } => format!(
                "How many days in {dates} had {fl} {} {threshold}?",
                comparator_text(*comparator)
            ),
            Shape::Compare { other } => format!("Compare my {fl} for {dates} versus {}?", dates_text(other)),
            Shape::Extremum { highest } => {
                format!("Which day in {dates} had the {} {fl}?", if *highest { "highest" } else { "lowest" })
            }
            Shape::Excursion => format!("Analyze glucose excursions for {dates}?"),
            Shape::Plot => format!("Plot my daily glucose trends for {dates}?"),
            Shape::Modality { modality, .. } => format!("What's my daily {modality} total on {dates}?"),
        }
    }

    fn dates_arg(&self) -> Value {
        Value::String(match &self.selection.set {
            DateSet::Range { start, end } => format!("({start}, {end})"),
            _ => {
                let d: Vec<String> = self.selection.dates().iter().map(|d| format!("'{d}'")).collect();
                format!("[{}]", d.join(", "))
            }
        })
    }

    fn with_window(&self, mut args: Value) -> Value {
        if let Some(w) = self.selection.window {
            args["window"] = json!(window_text(w));
        }
        args
    }

    fn tool_calls(&self) -> Vec<ToolCall> {
        let dates = self.dates_arg();
        let multi_day = self.selection.dates().len() > 1;
        match &self.shape {
            Shape::Retrieval if multi_day => {
                let mut fs = self.features.clone();
                if !fs.contains(&Feature::WeartimePct) {
                    fs.push(Feature::WeartimePct);
                }
                fs.iter()
                    .map(|f| ToolCall::new("get_average", self.with_window(json!({"dates": dates, "feature": f.as_str()}))))
                    .collect()
            }
            Shape::Retrieval => {
                let mut fs: Vec<&str> = self.features.iter().map(|f| f.as_str()).collect();
                if !fs.contains(&"weartime_pct") {
                    fs.push("weartime_pct");
                }
                vec![ToolCall::new(
                    "extract_features_json",
                    self.with_window(json!({"dates": dates, "features": fs})),
                )]
            }
            Shape::Count { comparator, threshold } => vec![ToolCall::new(
                "count_satisfied_condition",
                self.with_window(json!({"dates": dates, "feature": self.features[0].as_str(),
                    "comparator": comparator_text(*comparator), "threshold": threshold})),
            )],
            Shape::Compare { other } => {
                let other_intent = Intent {
                    shape: Shape::Retrieval,
                    selection: other.clone(),
                    features: Vec::new(),
                };
                vec![ToolCall::new(
                    "compute_difference_ratio",
                    self.with_window(json!({"feature": self.features[0].as_str(), "group_a": dates,
                        "group_b": other_intent.dates_arg()})),
                )]
            }
            Shape::Extremum { highest } => vec![ToolCall::new(
                "feature_range",
                self.with_window(json!({"dates": dates, "feature": self.features[0].as_str(),
                    "mode": if *highest { "max" } else { "min" }})),
            )],
            Shape::Excursion => vec![ToolCall::new(
                "calculate_blood_glucose_excursion",
                self.with_window(json!({"dates": dates})),
            )],
            Shape::Plot => vec![ToolCall::new("plot_daily_trends", self.with_window(json!({"dates": dates})))],
            Shape::Modality { modality, .. } => {
                let tool = if modality == "insulin" { "insulin.daily_insulin_total" } else { "carbs.daily_carb_total" };
                vec![ToolCall::new(tool, json!({"dates": dates}))]
            }
        }
    }
}

fn window_text(w: ClockWindow) -> String {
    format!("{}-{}", w.start_label(), w.end_label())
}

/// Offline backend for every layer except the judge.
#[derive(Debug, Clone, Default)]
pub struct LocalBackend {
    resolver: TemporalResolver,
}

impl LocalBackend {
    pub fn new(resolver: TemporalResolver) -> Self {
        Self { resolver }
    }

    fn reference(&self, req: &CompletionRequest) -> NaiveDate {
        req.context
            .get("reference_date")
            .and_then(Value::as_str)
            .and_then(|s| s.parse().ok())
            .or_else(|| reference_from(&req.focus))
            .unwrap_or_else(|| chrono::Local::now().date_naive())
    }

    fn parser(&self, req: &CompletionRequest) -> Parser<'_> {
        Parser {
            resolver: &self.resolver,
            reference: self.reference(req),
        }
    }

    fn modalities(req: &CompletionRequest) -> Vec<String> {
        let mut out: Vec<String> = req
            .context
            .get("modalities")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default();
        for m in ["insulin", "carbs"] {
            if req.system.contains(&format!("\"{m}.")) && !out.iter().any(|x| x == m) {
                out.push(m.to_string());
            }
        }
        out
    }

    fn clarify(&self, req: &CompletionRequest) -> Value {
        let time = self.parser(req).resolve(&req.focus);
        let question = match (&time.vague_term, &time.selection) {
            (Some(term), _) => Some(format!(
                "Please specify the time range you mean by \"{term}\" (for example 4 AM to 6 AM) and the date."
            )),
            (None, None) => Some("Which dates should I look at?".to_string()),
            _ => None,
        };
        json!({"needs_clarification": question.is_some(), "question": question.unwrap_or_default()})
    }

    fn refine(&self, req: &CompletionRequest) -> Value {
        match self.parser(req).understand(&req.focus, &Self::modalities(req)) {
            Understanding::Missing { what, .. } => json!({
                "is_answerable": false,
                "refined_question": format!("Not answerable: requires {what}, which CGM data does not include."),
                "rationale": format!("I don't have access to your {what}; only glucose readings are available."),
            }),
            Understanding::Answerable(intents) => {
                let q: Vec<String> = intents.iter().map(Intent::question).collect();
                json!({"is_answerable": true, "refined_question": q.join(" "), "rationale": ""})
            }
        }
    }

    fn route(&self, req: &CompletionRequest) -> Value {
        let parser = self.parser(req);
        let mut questions: Vec<String> = Vec::new();
        let mut rest = req.focus.trim();
        if reference_from(rest).is_some() {
            questions.push(rest.to_string());
        } else {
            while let Some(i) = rest.find("? ") {
                questions.push(rest[..=i].to_string());
                rest = rest[i + 2..].trim();
            }
            if !rest.is_empty() {
                questions.push(rest.to_string());
            }
        }
        let dates: Vec<String> = questions
            .iter()
            .map(|q| match parser.understand(q, &Self::modalities(req)) {
                Understanding::Answerable(i) => match &i[0].shape {
                    Shape::Compare { other } => format!("{} vs {}", i[0].selection.key(), other.key()),
                    _ => i[0].selection.key(),
                },
                Understanding::Missing { .. } => String::new(),
            })
            .collect();
        json!({"date_list": dates, "question_list": questions})
    }

    fn execute(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let parser = self.parser(req);
        match parser.understand(&req.focus, &Self::modalities(req)) {
            Understanding::Answerable(intents) => {
                let calls: Vec<ToolCall> = intents.iter().flat_map(Intent::tool_calls).collect();
                tool_sequence(&calls, req)
            }
            Understanding::Missing { what, modality } => {
                let text = req.focus.find("User Question: ").map_or(req.focus.as_str(), |i| &req.focus[i + 15..]);
                let key = parser.selection(&parser.resolve(text)).key();
                let feature = match modality {
                    Some(m) => format!("{m}_related_value"),
                    None => what.replace([' ', '-'], "_"),
                };
                let mut payload = Payload::new();
                payload.entry(key).or_default().insert(feature, SENTINEL);
                Ok(json!({ "result": payload }).to_string())
            }
        }
    }
}

impl LlmBackend for LocalBackend {
    fn name(&self) -> &str {
        "local"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        match req.layer {
            Layer::Clarifier => Ok(self.clarify(req).to_string()),
            Layer::InputProcessor => Ok(self.refine(req).to_string()),
            Layer::Router => Ok(self.route(req).to_string()),
            Layer::Executor => self.execute(req),
            Layer::Generator => summarize_context(&req.context),
            Layer::Judge => Err(BackendError::Config("the local backend does not judge".into())),
        }
    }
}
