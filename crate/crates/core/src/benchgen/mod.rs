//! Benchmark factory. Questions are instantiated from parameterized templates
//! and their ground truth is whatever the sandbox tools return for the
//! template's procedure on the subject's data.

mod runner;
mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{Days, NaiveDate, NaiveDateTime};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{Layer, Pattern, Reply, ScriptedBackend};
use crate::sandbox::{merge_unconsumed, LocalData, Payload, ToolCall, ToolRegistry, Workspace};

pub use runner::{read_runs, run_benchmark, simulated_user, write_runs, RunRecord, RUN_SCHEMA};
pub use template::{
    fill_procedure, fill_text, fill_value, placeholders, ChoiceOption, OutOfScopeOption, ParamDomain, ParamSpec,
    ParamValue, QuestionTemplate, ReferenceRule, Span, StepTemplate,
};

pub const BENCHMARK_SCHEMA: &str = "cgmqa-benchmark";
pub const BENCHMARK_VERSION: u32 = 1;
/// Attempts at drawing consistent parameters before giving up on a template.
const MAX_DRAWS: usize = 50;

const DEFAULT_LIBRARY: &str = include_str!("templates.json");

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("template `{id}`: {message}")]
    Template { id: String, message: String },
    #[error("subject `{subject}` spans {days} days, too short for template `{template}`")]
    SpanTooShort { subject: String, template: String, days: u32 },
    #[error("subject `{0}` has no readings")]
    EmptySubject(String),
    #[error("no subjects")]
    NoSubjects,
    #[error("no templates for category {0}")]
    NoTemplates(Category),
    #[error("invalid mix: {0}")]
    Mix(String),
    #[error("ground truth for template `{template}` failed at `{tool}`: {message}")]
    Dispatch { template: String, tool: String, message: String },
    #[error("benchmark file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Template,
    Direct,
    Proxy,
    Unanswerable,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Template, Category::Direct, Category::Proxy, Category::Unanswerable];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Template => "template",
            Category::Direct => "direct",
            Category::Proxy => "proxy",
            Category::Unanswerable => "unanswerable",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| BenchError::Mix(format!("unknown category `{s}`")))
    }
}

/// Category proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mix(pub BTreeMap<Category, f64>);

impl Mix {
    /// 2470 / 798 / 399 / 513, the composition of the published question set.
    pub fn standard() -> Self {
        Self::from_counts(&[
            (Category::Template, 2470),
            (Category::Direct, 798),
            (Category::Proxy, 399),
            (Category::Unanswerable, 513),
        ])
    }

    pub fn only(c: Category) -> Self {
        Self(BTreeMap::from([(c, 1.0)]))
    }

    pub fn from_counts(counts: &[(Category, usize)]) -> Self {
        let total: usize = counts.iter().map(|(_, n)| n).sum();
        Self(counts.iter().map(|(c, n)| (*c, *n as f64 / total as f64)).collect())
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.0.values().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(BenchError::Mix("proportions must be non-negative".into()));
        }
        let sum: f64 = self.0.values().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(BenchError::Mix(format!("proportions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Item counts per category by largest remainder; ties go to the
    /// earlier category.
    pub fn counts(&self, n: usize) -> BTreeMap<Category, usize> {
        let exact: Vec<(Category, f64)> = self.0.iter().map(|(c, p)| (*c, p * n as f64)).collect();
        let mut out: BTreeMap<Category, usize> = exact.iter().map(|(c, x)| (*c, x.floor() as usize)).collect();
        let assigned: usize = out.values().sum();
        let mut order: Vec<(Category, f64)> = exact.iter().map(|(c, x)| (*c, x - x.floor())).collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (c, _) in order.into_iter().take(n.saturating_sub(assigned)) {
            *out.get_mut(&c).expect("category present") += 1;
        }
        out
    }
}

/// `template=0.6,direct=0.2,...`
impl FromStr for Mix {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "standard" {
            return Ok(Self::standard());
        }
        let mut map = BTreeMap::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (c, p) = part
                .split_once('=')
                .ok_or_else(|| BenchError::Mix(format!("expected category=proportion, got `{part}`")))?;
            let p: f64 = p.trim().parse().map_err(|_| BenchError::Mix(format!("bad proportion `{p}`")))?;
            map.insert(c.parse()?, p);
        }
        let mix = Self(map);
        mix.validate()?;
        Ok(mix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub subject_id: String,
    pub question: String,
    pub category: Category,
    pub template_id: String,
    /// Parameter wording as it appears in the question.
    pub params: BTreeMap<String, String>,
    pub reference_datetime: NaiveDateTime,
    pub is_answerable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_question: Option<String>,
    pub procedure: Vec<ToolCall>,
    pub ground_truth: Payload,
    pub required_features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_modality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_of: Option<String>,
}

impl BenchmarkItem {
    pub fn reference_date(&self) -> NaiveDate {
        self.reference_datetime.date()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n: usize,
    pub mix: Mix,
    pub seed: u64,
    /// Share of unanswerable items built by injecting an out-of-scope
    /// feature next to a CGM metric.
    pub inject_fraction: f64,
    /// Worker threads; zero picks the available parallelism.
    pub jobs: usize,
}

impl GenerationConfig {
    pub fn new(n: usize, mix: Mix, seed: u64) -> Self {
        Self {
            n,
            mix,
            seed,
            inject_fraction: 0.5,
            jobs: 0,
        }
    }
}

pub fn parse_templates(json: &str) -> Result<Vec<QuestionTemplate>, BenchError> {
    let templates: Vec<QuestionTemplate> = serde_json::from_str(json)?;
    let mut ids = BTreeSet::new();
    for t in &templates {
        t.validate(None)?;
        if !ids.insert(&t.id) {
            return Err(BenchError::Template {
                id: t.id.clone(),
                message: "duplicate template id".into(),
            });
        }
    }
    Ok(templates)
}

pub fn load_templates(path: &Path) -> Result<Vec<QuestionTemplate>, BenchError> {
    parse_templates(&std::fs::read_to_string(path)?)
}

/// The bundled library.
pub fn default_templates() -> Vec<QuestionTemplate> {
    parse_templates(DEFAULT_LIBRARY).expect("bundled templates are valid")
}

pub fn default_library_json() -> &'static str {
    DEFAULT_LIBRARY
}

/// Runs `procedure` on a fresh workspace and merges the outputs nothing
/// later consumed. Any failure aborts: ground truth is never partial.
pub fn generate_ground_truth(
    template_id: &str,
    procedure: &[ToolCall],
    data: &LocalData,
    registry: &ToolRegistry,
) -> Result<Payload, BenchError> {
    let mut ws = Workspace::new();
    let mut results = Vec::with_capacity(procedure.len());
    for call in procedure {
        let r = registry.dispatch(call, data, &mut ws).map_err(|e| BenchError::Dispatch {
            template: template_id.to_string(),
            tool: call.name.clone(),
            message: e.to_string(),
        })?;
        results.push(r);
    }
    Ok(merge_unconsumed(&results))
}

fn span_of(data: &LocalData) -> Result<Span, BenchError> {
    match (data.cgm.first_date(), data.cgm.last_date()) {
        (Some(first), Some(last)) => Ok(Span { first, last }),
        _ => Err(BenchError::EmptySubject(data.cgm.subject_id.clone())),
    }
}

struct Plan<'a> {
    index: usize,
    category: Category,
    templates: &'a [&'a QuestionTemplate],
}

fn instantiate_one(
    plan: &Plan<'_>,
    subjects: &[Arc<LocalData>],
    registry: &ToolRegistry,
    config: &GenerationConfig,
) -> Result<BenchmarkItem, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(plan.index as u64 + 1);
    let data = subjects.choose(&mut rng).ok_or(BenchError::NoSubjects)?;
    let span = span_of(data)?;
    let pool: Vec<&QuestionTemplate> = if plan.category == Category::Unanswerable {
        let (injected, plain): (Vec<&QuestionTemplate>, Vec<&QuestionTemplate>) =
            plan.templates.iter().copied().partition(|t| t.injected);
        let inject = rng.random_bool(config.inject_fraction.clamp(0.0, 1.0));
        match (inject, injected.is_empty(), plain.is_empty()) {
            (true, false, _) | (false, false, true) => injected,
            _ => plain,
        }
    } else {
        plan.templates.to_vec()
    };
    let template = *pool.choose(&mut rng).ok_or(BenchError::NoTemplates(plan.category))?;
    let values = (0..MAX_DRAWS)
        .find_map(|_| {
            let mut values = BTreeMap::new();
            for p in &template.params {
                let v = template::draw(&p.domain, span, &values, &mut rng).ok()?;
                values.insert(p.name.clone(), v);
            }
            Some(values)
        })
        .ok_or_else(|| BenchError::SpanTooShort {
            subject: data.cgm.subject_id.clone(),
            template: template.id.clone(),
            days: span.days(),
        })?;
    let rule = &template.reference;
    let anchor = match &rule.anchor {
        Some(name) => values.get(name).and_then(|v| v.dates.last().copied()),
        None => values.values().flat_map(|v| v.dates.iter().copied()).max(),
    }
    .unwrap_or(span.last);
    let offset = rng.random_range(rule.min_offset_days..=rule.max_offset_days);
    let reference_datetime = (anchor + Days::new(u64::from(offset)))
        .and_hms_opt(rule.hour, 0, 0)
        .expect("validated hour");
    let question = fill_text(&template.text, &values);
    let procedure = fill_procedure(&template.procedure, &values);
    let ground_truth = generate_ground_truth(&template.id, &procedure, data, registry)?;
    let required_features = match &template.required_features {
        Some(f) => f.clone(),
        None => ground_truth
            .values()
            .flat_map(|row| row.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let answerable = template.category != Category::Unanswerable;
    let missing_modality = template
        .missing_modality
        .clone()
        .or_else(|| values.values().find_map(|v| v.modality.clone()));
    Ok(BenchmarkItem {
        id: format!("item-{:05}", plan.index + 1),
        subject_id: data.cgm.subject_id.clone(),
        question: question.clone(),
        category: template.category,
        template_id: template.id.clone(),
        params: values.iter().map(|(k, v)| (k.clone(), v.text.clone())).collect(),
        reference_datetime,
        is_answerable: answerable,
        refined_question: answerable.then(|| template.refined.as_deref().map_or(question, |r| fill_text(r, &values))),
        procedure,
        ground_truth,
        required_features,
        missing_modality: if answerable { None } else { missing_modality },
        proxy_of: template.proxy_of.clone(),
    })
}

/// Instantiates `config.n` items. Output depends only on the inputs and the
/// seed, not on thread scheduling.
pub fn instantiate_templates(
    templates: &[QuestionTemplate],
    subjects: &[Arc<LocalData>],
    registry: &ToolRegistry,
    config: &GenerationConfig,
) -> Result<Vec<BenchmarkItem>, BenchError> {
    if subjects.is_empty() {
        return Err(BenchError::NoSubjects);
    }
    config.mix.validate()?;
    for t in templates {
        t.validate(Some(registry))?;
    }
    for s in subjects {
        span_of(s)?;
    }
    let by_category: BTreeMap<Category, Vec<&QuestionTemplate>> = Category::ALL
        .into_iter()
        .map(|c| (c, templates.iter().filter(|t| t.category == c).collect()))
        .collect();
    let counts = config.mix.counts(config.n);
    let mut categories: Vec<Category> = Vec::with_capacity(config.n);
    for (c, k) in &counts {
        if *k > 0 && by_category[c].is_empty() {
            return Err(BenchError::NoTemplates(*c));
        }
        categories.extend(std::iter::repeat_n(*c, *k));
    }
    categories.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let plans: Vec<Plan<'_>> = categories
        .into_iter()
        .enumerate()
        .map(|(index, category)| Plan {
            index,
            category,
            templates: &by_category[&category],
        })
        .collect();
    let jobs = match config.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        j => j,
    }
    .clamp(1, plans.len().max(1));
    let chunk = plans.len().div_ceil(jobs).max(1);
    let results: Vec<Result<BenchmarkItem, BenchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = plans
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|p| instantiate_one(p, subjects, registry, config))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("generation thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkHeader {
    pub schema: String,
    pub version: u32,
    pub count: usize,
}

pub fn write_benchmark_to<W: Write>(items: &[BenchmarkItem], writer: W) -> Result<(), BenchError> {
    let mut w = BufWriter::new(writer);
    let header = BenchmarkHeader {
        schema: BENCHMARK_SCHEMA.into(),
        version: BENCHMARK_VERSION,
        count: items.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_benchmark(items: &[BenchmarkItem], path: &Path) -> Result<(), BenchError> {
    write_benchmark_to(items, std::fs::File::create(path)?)
}

pub fn read_benchmark_from<R: Read>(reader: R) -> Result<Vec<BenchmarkItem>, BenchError> {
    let mut lines = BufReader::new(reader).lines();
    let header: BenchmarkHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(BenchError::Format("missing header line".into())),
    };
    if header.schema != BENCHMARK_SCHEMA || header.version != BENCHMARK_VERSION {
        return Err(BenchError::Format(format!(
            "unsupported schema {} v{}",
            header.schema, header.version
        )));
    }
    let mut items = Vec::with_capacity(header.count);
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            items.push(serde_json::from_str(&line)?);
        }
    }
    if items.len() != header.count {
        return Err(BenchError::Format(format!(
            "header announces {} items, found {}",
            header.count,
            items.len()
        )));
    }
    Ok(items)
}

pub fn read_benchmark(path: &Path) -> Result<Vec<BenchmarkItem>, BenchError> {
    read_benchmark_from(std::fs::File::open(path)?)
}

/// Script that answers exactly as the benchmark expects: the labeled
/// rewrite, a single task, the reference procedure, then a summary.
pub fn aligned_script(item: &BenchmarkItem) -> ScriptedBackend {
    let refined = item.refined_question.clone().unwrap_or_else(|| item.question.clone());
    let rationale = match &item.missing_modality {
        Some(m) if !item.is_answerable => format!("This needs {m}, which is not in your CGM data."),
        _ => String::new(),
    };
    ScriptedBackend::new(Vec::new())
        .with(
            Layer::InputProcessor,
            Pattern::Exact(item.question.clone()),
            Reply::Json(json!({"is_answerable": item.is_answerable,
                "refined_question": refined, "rationale": rationale})),
        )
        .with(
            Layer::Router,
            Pattern::Exact(refined.clone()),
            Reply::Json(json!({"date_list": [""], "question_list": [refined]})),
        )
        .with(Layer::Executor, Pattern::Exact(refined), Reply::ToolSequence(item.procedure.clone()))
        .with(Layer::Generator, Pattern::Any, Reply::Summarize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_mix_counts() {
        let c = Mix::standard().counts(418);
        assert_eq!(
            c.values().copied().collect::<Vec<_>>(),
            vec![247, 80, 40, 51]
        );
        let c = Mix::standard().counts(4180);
        assert_eq!(c.values().copied().collect::<Vec<_>>(), vec![2470, 798, 399, 513]);
    }

    #[test]
    fn mix_parsing() {
        let m: Mix = "template=0.5, unanswerable=0.5".parse().unwrap();
        assert_eq!(m.counts(3).values().sum::<usize>(), 3);
        assert!("template=0.5".parse::<Mix>().is_err());
        assert!("bogus=1".parse::<Mix>().is_err());
    }

    #[test]
    fn bundled_library_covers_categories() {
        let t = default_templates();
        for c in Category::ALL {
            assert!(t.iter().any(|x| x.category == c), "{c}");
        }
        assert!(t.iter().any(|x| x.injected));
    }

    #[test]
    fn validation_rejects_mismatches() {
        let base = default_templates().into_iter().find(|t| t.id == "tir_on_date").unwrap();
        let mut t = base.clone();
        t.text = "TIR on {day}?".into();
        assert!(t.validate(None).is_err());
        let mut t = base.clone();
        t.category = Category::Unanswerable;
        assert!(t.validate(None).is_err());
        let mut t = base;
        t.params[0].domain = ParamDomain::Feature { choices: vec!["insulin".into()] };
        assert!(t.validate(None).is_err());
    }
}
