//! Scores agent runs against benchmark ground truth: answerability
//! classification for the input processor, feature-call matching and value
//! accuracy for the executor, plus readability and latency summaries.

mod alias;
mod judge;
mod readability;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::Layer;
use crate::benchgen::{BenchmarkItem, Category, RunRecord};
use crate::sandbox::Payload;
use crate::SENTINEL;

pub use alias::{normalize, AliasConflict, AliasTable};
pub use judge::{compare_judges, judge_item, judge_request, JudgeAgreement, JudgeError, JudgeItemDelta};
pub use readability::{readability, syllables, text_stats, ReadabilityReport, TextStats};

/// Relative tolerance for numeric agreement.
pub const VALUE_TOLERANCE: f64 = 0.01;
/// Absolute tolerance used when the ground truth is exactly zero.
pub const ZERO_TOLERANCE: f64 = 0.01;

/// Whether a predicted value agrees with ground truth for `canonical`.
/// `predicted` is `None` when the agent did not report the feature.
pub fn value_match(gt: f64, predicted: Option<f64>, canonical: &str, aliases: &AliasTable) -> bool {
    let Some(p) = predicted else {
        return gt == SENTINEL;
    };
    let weartime = aliases.is_weartime_like(canonical);
    let no_data = |x: f64| x == SENTINEL || (weartime && x == 0.0);
    if gt == SENTINEL || p == SENTINEL {
        return no_data(gt) && no_data(p);
    }
    if gt == 0.0 {
        return p.abs() <= ZERO_TOLERANCE;
    }
    (p - gt).abs() <= VALUE_TOLERANCE * gt.abs()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallMatchReport {
    pub num_gt_features: usize,
    pub num_agent_features: usize,
    pub num_overlap: usize,
    /// False negatives.
    pub features_in_gt_not_in_agent: Vec<String>,
    /// False positives.
    pub features_in_agent_not_in_gt: Vec<String>,
    pub feature_value_comparison: BTreeMap<String, bool>,
    /// Why this item could not be scored normally.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged: Option<String>,
    /// Agent feature names the alias table did not recognize.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unmatched_names: Vec<String>,
}

impl CallMatchReport {
    /// A report in which nothing the agent said counts.
    pub fn total_miss(num_gt_features: usize, gt_names: Vec<String>, reason: impl Into<String>) -> Self {
        Self {
            num_gt_features,
            features_in_gt_not_in_agent: gt_names,
            flagged: Some(reason.into()),
            ..Self::default()
        }
    }

    pub fn matched_values(&self) -> usize {
        self.feature_value_comparison.values().filter(|m| **m).count()
    }

    pub fn precision(&self) -> f64 {
        ratio(self.num_overlap, self.num_agent_features)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.num_overlap, self.num_gt_features)
    }

    pub fn value_accuracy(&self) -> f64 {
        ratio(self.matched_values(), self.feature_value_comparison.len())
    }

    /// Every ground-truth feature found and every compared value right.
    pub fn is_exact(&self) -> bool {
        self.flagged.is_none()
            && self.num_overlap == self.num_gt_features
            && self.matched_values() == self.feature_value_comparison.len()
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Date keys compared without whitespace or quote differences.
fn normalize_key(key: &str) -> String {
    key.chars().filter(|c| !c.is_whitespace() && *c != '\'' && *c != '"').collect()
}

struct Canon<'a> {
    aliases: &'a AliasTable,
    required: Option<BTreeSet<String>>,
}

impl Canon<'_> {
    fn keep(&self, canonical: &str) -> bool {
        self.required
            .as_ref()
            .is_none_or(|r| r.contains(canonical) || r.contains(&self.aliases.core(canonical)))
    }

    /// `(key, canonical feature) -> value`, filtered to required features.
    fn rows(&self, payload: &Payload, unmatched: &mut BTreeSet<String>) -> BTreeMap<(String, String), f64> {
        let mut out = BTreeMap::new();
        for (key, row) in payload {
            for (name, v) in row {
                let (c, known) = self.aliases.canonical(name);
                if !known {
                    unmatched.insert(name.clone());
                }
                if self.keep(&c) {
                    out.insert((normalize_key(key), c), *v);
                }
            }
        }
        out
    }
}

fn label((key, feature): &(String, String)) -> String {
    format!("{key}::{feature}")
}

/// Aligns the agent's payload with ground truth by date key and canonical
/// feature name. With `required_features` set, other features are ignored.
pub fn match_calls(item: &BenchmarkItem, agent: &Payload, aliases: &AliasTable) -> CallMatchReport {
    let canon = Canon {
        aliases,
        required: (!item.required_features.is_empty())
            .then(|| item.required_features.iter().map(|f| aliases.canonical(f).0).collect()),
    };
    let mut gt_unmatched = BTreeSet::new();
    let gt = canon.rows(&item.ground_truth, &mut gt_unmatched);
    let mut unmatched = BTreeSet::new();
    let ag = canon.rows(agent, &mut unmatched);
    let mut report = CallMatchReport {
        num_gt_features: gt.len(),
        num_agent_features: ag.len(),
        ..CallMatchReport::default()
    };
    for (k, g) in &gt {
        match ag.get(k) {
            Some(p) => {
                report.num_overlap += 1;
                report.feature_value_comparison.insert(label(k), value_match(*g, Some(*p), &k.1, aliases));
            }
            // both sides agree there is no data
            None if *g == SENTINEL => {
                report.num_overlap += 1;
                report.num_agent_features += 1;
                report.feature_value_comparison.insert(label(k), true);
            }
            None => report.features_in_gt_not_in_agent.push(label(k)),
        }
    }
    report.features_in_agent_not_in_gt = ag.keys().filter(|k| !gt.contains_key(*k)).map(label).collect();
    let gt_names: BTreeSet<&String> = gt.keys().map(|k| &k.1).collect();
    report.unmatched_names = unmatched.into_iter().filter(|n| !gt_names.contains(&aliases.canonical(n).0)).collect();
    report
}

/// Decodes an agent payload given as JSON (booleans count as 1/0) before
/// matching. Undecodable payloads score as a total miss.
pub fn match_calls_json(item: &BenchmarkItem, agent: &Value, aliases: &AliasTable) -> CallMatchReport {
    match crate::agent::payload_from_json(agent) {
        Ok(p) => match_calls(item, &p, aliases),
        Err(e) => {
            let gt = match_calls(item, &item.ground_truth, aliases);
            let names = gt.feature_value_comparison.keys().cloned().collect();
            CallMatchReport::total_miss(gt.num_gt_features, names, format!("malformed payload: {e}"))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub value_accuracy: f64,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Micro-averaged over all features of all items. Accuracy is the share of
/// items scored exactly.
pub fn layer2_metrics(reports: &[CallMatchReport]) -> LayerMetrics {
    let sum = |f: fn(&CallMatchReport) -> usize| reports.iter().map(f).sum::<usize>();
    let overlap = sum(|r| r.num_overlap);
    let precision = ratio(overlap, sum(|r| r.num_agent_features));
    let recall = ratio(overlap, sum(|r| r.num_gt_features));
    LayerMetrics {
        n: reports.len(),
        accuracy: ratio(reports.iter().filter(|r| r.is_exact()).count(), reports.len()),
        precision,
        recall,
        f1: f1(precision, recall),
        value_accuracy: ratio(sum(|r| r.matched_values()), sum(|r| r.feature_value_comparison.len())),
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("{labels} labels but {predictions} predictions")]
pub struct LengthMismatch {
    pub labels: usize,
    pub predictions: usize,
}

/// Answerable is the positive class.
pub fn layer1_metrics(labels: &[bool], predictions: &[bool]) -> Result<LayerMetrics, LengthMismatch> {
    if labels.len() != predictions.len() {
        return Err(LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    let count = |l: bool, p: bool| labels.iter().zip(predictions).filter(|(a, b)| **a == l && **b == p).count();
    let (tp, fp, fn_, tn) = (count(true, true), count(false, true), count(true, false), count(false, false));
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(LayerMetrics {
        n: labels.len(),
        accuracy: ratio(tp + tn, labels.len()),
        precision,
        recall,
        f1: f1(precision, recall),
        value_accuracy: 0.0,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub mean_backend_calls: f64,
    pub mean_tool_calls: f64,
    pub mean_layer_ms: BTreeMap<Layer, f64>,
}

/// Value at nearest rank `ceil(q * n)` of sorted data.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Summary over records; `None` for an empty list.
pub fn latency_stats(records: &[RunRecord]) -> Option<LatencyStats> {
    if records.is_empty() {
        return None;
    }
    let mut secs: Vec<f64> = records.iter().map(|r| r.latency_ms / 1000.0).collect();
    secs.sort_by(f64::total_cmp);
    let n = records.len() as f64;
    let mut layers: BTreeMap<Layer, f64> = BTreeMap::new();
    for r in records {
        for (l, ms) in &r.layer_latency_ms {
            *layers.entry(*l).or_default() += ms / n;
        }
    }
    Some(LatencyStats {
        n: records.len(),
        mean_s: secs.iter().sum::<f64>() / n,
        median_s: median(&secs),
        p95_s: nearest_rank(&secs, 0.95),
        mean_backend_calls: records.iter().map(|r| r.backend_calls as f64).sum::<f64>() / n,
        mean_tool_calls: records.iter().map(|r| r.tool_calls.len() as f64).sum::<f64>() / n,
        mean_layer_ms: layers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelection {
    One,
    Two,
    #[default]
    All,
}

impl std::str::FromStr for LayerSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "all" => Ok(Self::All),
            other => Err(format!("layer must be 1, 2 or all, not `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub layer: LayerSelection,
    pub readability: bool,
    pub latency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub category: Category,
    pub report: CallMatchReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: usize,
    pub runs_missing: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer1: Option<LayerMetrics>,
    /// Runs without an input-processor verdict, left out of layer 1.
    pub layer1_skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer2: Option<LayerMetrics>,
    pub layer2_by_category: BTreeMap<Category, LayerMetrics>,
    /// Runs judged unanswerable that still called tools.
    pub bypass_violations: Vec<String>,
    pub flagged: BTreeMap<String, String>,
    pub unmatched_names: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readability: Option<ReadabilityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<ItemScore>,
}

/// Layer-2 report for one run; failed runs are flagged.
pub fn score_run(item: &BenchmarkItem, run: &RunRecord, aliases: &AliasTable) -> CallMatchReport {
    let mut report = match_calls(item, &run.payload, aliases);
    if !run.ok && report.flagged.is_none() {
        report.flagged = Some(run.error.clone().unwrap_or_else(|| "run failed".into()));
    }
    report
}

pub fn evaluate(items: &[BenchmarkItem], runs: &[RunRecord], options: &EvalOptions, aliases: &AliasTable) -> EvalReport {
    let by_id: BTreeMap<&str, &RunRecord> = runs.iter().map(|r| (r.item_id.as_str(), r)).collect();
    let mut report = EvalReport {
        items: items.len(),
        ..EvalReport::default()
    };
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    let mut per_category: BTreeMap<Category, Vec<CallMatchReport>> = BTreeMap::new();
    let mut matched_runs = Vec::new();
    for item in items {
        let Some(run) = by_id.get(item.id.as_str()) else {
            report.runs_missing.push(item.id.clone());
            continue;
        };
        matched_runs.push((*run).clone());
        match run.predicted_answerable {
            Some(p) => {
                labels.push(item.is_answerable);
                preds.push(p);
            }
            None => report.layer1_skipped += 1,
        }
        if run.predicted_answerable == Some(false) && !run.tool_calls.is_empty() {
            report.bypass_violations.push(item.id.clone());
        }
        if item.is_answerable {
            let score = score_run(item, run, aliases);
            if let Some(reason) = &score.flagged {
                report.flagged.insert(item.id.clone(), reason.clone());
            }
            report.unmatched_names.extend(score.unmatched_names.iter().cloned());
            per_category.entry(item.category).or_default().push(score.clone());
            report.scores.push(ItemScore {
                item_id: item.id.clone(),
                category: item.category,
                report: score,
            });
        }
    }
    if options.layer != LayerSelection::Two && !labels.is_empty() {
        report.layer1 = layer1_metrics(&labels, &preds).ok();
    }
    if options.layer != LayerSelection::One && !report.scores.is_empty() {
        let all: Vec<CallMatchReport> = report.scores.iter().map(|s| s.report.clone()).collect();
        report.layer2 = Some(layer2_metrics(&all));
        report.layer2_by_category = per_category.iter().map(|(c, r)| (*c, layer2_metrics(r))).collect();
    }
    if options.readability {
        let texts: Vec<&str> = matched_runs.iter().filter_map(|r| r.response.as_deref()).collect();
        report.readability = readability(&texts);
    }
    if options.latency {
        report.latency = latency_stats(&matched_runs);
    }
    report
}

impl EvalReport {
    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "items: {}  missing runs: {}", self.items, self.runs_missing.len());
        let row = |s: &mut String, name: &str, m: &LayerMetrics| {
            let _ = writeln!(
                s,
                "{name:<22} n={:<5} acc={:.4} P={:.4} R={:.4} F1={:.4} value_acc={:.4}",
                m.n, m.accuracy, m.precision, m.recall, m.f1, m.value_accuracy
            );
        };
        if let Some(m) = &self.layer1 {
            row(&mut s, "layer 1 (answerable)", m);
            if self.layer1_skipped > 0 {
                let _ = writeln!(s, "  skipped without verdict: {}", self.layer1_skipped);
            }
        }
        if let Some(m) = &self.layer2 {
            row(&mut s, "layer 2 (all)", m);
            for (c, m) in &self.layer2_by_category {
                row(&mut s, &format!("  {c}"), m);
            }
        }
        let _ = writeln!(s, "bypass violations: {}", self.bypass_violations.len());
        if !self.flagged.is_empty() {
            let _ = writeln!(s, "flagged items: {}", self.flagged.len());
        }
        if !self.unmatched_names.is_empty() {
            let names: Vec<&str> = self.unmatched_names.iter().map(String::as_str).collect();
            let _ = writeln!(s, "unrecognized feature names: {}", names.join(", "));
        }
        if let Some(r) = &self.readability {
            let _ = writeln!(
                s,
                "readability            n={:<5} words={:.1} FRE={:.1} FK grade={:.1}",
                r.n, r.avg_words, r.flesch_reading_ease, r.flesch_kincaid_grade
            );
        }
        if let Some(l) = &self.latency {
            let _ = writeln!(
                s,
                "latency (s)            n={:<5} mean={:.3} median={:.3} p95={:.3} backend calls={:.2} tool calls={:.2}",
                l.n, l.mean_s, l.median_s, l.p95_s, l.mean_backend_calls, l.mean_tool_calls
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_examples() {
        let a = AliasTable::default();
        assert!(value_match(100.0, Some(100.9), "tir_pct", &a));
        assert!(!value_match(100.0, Some(101.5), "tir_pct", &a));
        assert!(value_match(-1.0, Some(0.0), "weartime_pct", &a));
        assert!(!value_match(-1.0, Some(0.0), "hypo_events", &a));
        assert!(value_match(-1.0, None, "hypo_events", &a));
        assert!(!value_match(5.0, None, "hypo_events", &a));
        assert!(value_match(0.0, Some(0.009), "hypo_events", &a));
        assert!(!value_match(0.0, Some(-1.0), "hypo_events", &a));
    }

    #[test]
    fn nearest_rank_percentile() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&xs, 0.95), 95.0);
        assert_eq!(nearest_rank(&[3.0], 0.95), 3.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 10.0]), 2.5);
    }
}
