use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::NaiveDate;
use proptest::prelude::*;
use serde_json::json;

use cgmqa_core::agent::{Layer, Pattern, PromptSet, Reply, ScriptedBackend};
use cgmqa_core::benchgen::{
    default_templates, instantiate_templates, BenchmarkItem, Category, GenerationConfig, Mix, RunRecord,
};
use cgmqa_core::data::{synthesize_series, SynthSpec};
use cgmqa_core::evaluator::{
    compare_judges, evaluate, judge_item, latency_stats, layer1_metrics, layer2_metrics, match_calls,
    match_calls_json, readability, text_stats, value_match, AliasTable, CallMatchReport, EvalOptions, JudgeError,
    LayerSelection,
};
use cgmqa_core::sandbox::{cgm_registry, LocalData, Payload, SandboxConfig};

fn payload(v: serde_json::Value) -> Payload {
    serde_json::from_value(v).unwrap()
}

fn item(gt: serde_json::Value, required: &[&str]) -> BenchmarkItem {
    BenchmarkItem {
        id: "item-00001".into(),
        subject_id: "s".into(),
        question: "q".into(),
        category: Category::Template,
        template_id: "t".into(),
        params: BTreeMap::new(),
        reference_datetime: NaiveDate::from_ymd_opt(2024, 1, 10).unwrap().and_hms_opt(21, 0, 0).unwrap(),
        is_answerable: true,
        refined_question: Some("q".into()),
        procedure: Vec::new(),
        ground_truth: payload(gt),
        required_features: required.iter().map(|s| s.to_string()).collect(),
        missing_modality: None,
        proxy_of: None,
    }
}

fn run(id: &str, payload: Payload, answerable: Option<bool>, latency_ms: f64) -> RunRecord {
    RunRecord {
        item_id: id.into(),
        subject_id: "s".into(),
        ok: true,
        error: None,
        error_layer: None,
        predicted_answerable: answerable,
        refined_question: None,
        payload,
        response: Some("Your TIR was 80%.".into()),
        is_refusal: false,
        tool_calls: Vec::new(),
        latency_ms,
        layer_latency_ms: BTreeMap::new(),
        backend_calls: 4,
        trace: None,
    }
}

fn report(overlap: usize, agent: usize, gt: usize, matched: usize) -> CallMatchReport {
    let mut r = CallMatchReport {
        num_gt_features: gt,
        num_agent_features: agent,
        num_overlap: overlap,
        ..CallMatchReport::default()
    };
    for i in 0..overlap {
        r.feature_value_comparison.insert(format!("f{i}"), i < matched);
    }
    r
}

#[test]
fn identical_payloads_score_perfectly() {
    let it = item(json!({"2024-01-05": {"tir_pct": 72.0, "weartime_pct": 100.0}}), &[]);
    let r = match_calls(&it, &it.ground_truth, &AliasTable::default());
    assert_eq!((r.num_gt_features, r.num_agent_features, r.num_overlap), (2, 2, 2));
    assert_eq!(r.precision(), 1.0);
    assert_eq!(r.recall(), 1.0);
    assert_eq!(r.value_accuracy(), 1.0);
    assert!(r.is_exact());
}

#[test]
fn unrequested_extras_are_ignored() {
    let it = item(json!({"2024-01-05": {"tir_pct": 72.0, "mean_glucose": 140.0}}), &["tir_pct"]);
    let agent = payload(json!({"2024-01-05": {"tir_pct": 72.3, "max_glucose": 250.0, "cv_pct": 30.0}}));
    let r = match_calls(&it, &agent, &AliasTable::default());
    assert_eq!((r.num_gt_features, r.num_agent_features, r.num_overlap), (1, 1, 1));
    assert_eq!(r.precision(), 1.0);
    assert!(r.features_in_agent_not_in_gt.is_empty());
}

#[test]
fn aliases_align_feature_names() {
    let it = item(json!({"2024-01-05": {"mean_glucose": 140.0, "avg_TIR_all": 70.0}}), &[]);
    let agent = payload(json!({"2024-01-05": {"avg bg": 140.5, "avg_tir_pct_all": 70.2}}));
    let r = match_calls(&it, &agent, &AliasTable::default());
    assert_eq!(r.num_overlap, 2);
    assert_eq!(r.value_accuracy(), 1.0);
    assert!(r.unmatched_names.is_empty());
}

#[test]
fn missing_data_agreement_counts_as_overlap() {
    let it = item(json!({"2024-01-05": {"tir_pct": -1.0, "hypo_events": -1.0}}), &[]);
    let agent = payload(json!({"2024-01-05": {"hypo_events": 0.0}}));
    let r = match_calls(&it, &agent, &AliasTable::default());
    assert_eq!(r.num_overlap, 2);
    assert_eq!(r.num_agent_features, 2);
    assert!(r.feature_value_comparison["2024-01-05::tir_pct"]);
    assert!(!r.feature_value_comparison["2024-01-05::hypo_events"]);
}

#[test]
fn false_negatives_and_positives_are_disjoint_from_overlap() {
    let it = item(json!({"(2024-01-01, 2024-01-03)": {"avg_TIR_all": 70.0, "days_all": 3.0}}), &[]);
    let agent = payload(json!({"(2024-01-01,2024-01-03)": {"avg_TIR_all": 75.0}, "2024-01-04": {"tir_pct": 1.0}}));
    let r = match_calls(&it, &agent, &AliasTable::default());
    assert_eq!(r.num_overlap, 1);
    assert_eq!(r.features_in_gt_not_in_agent, vec!["(2024-01-01,2024-01-03)::days_all"]);
    assert_eq!(r.features_in_agent_not_in_gt, vec!["2024-01-04::tir_pct"]);
    assert_eq!(r.value_accuracy(), 0.0);
}

#[test]
fn malformed_payload_is_a_flagged_miss() {
    let it = item(json!({"2024-01-05": {"tir_pct": 72.0}}), &[]);
    let r = match_calls_json(&it, &json!({"2024-01-05": "high"}), &AliasTable::default());
    assert!(r.flagged.is_some());
    assert_eq!((r.num_gt_features, r.num_overlap), (1, 0));
    let ok = match_calls_json(&it, &json!({"2024-01-05": {"tir_pct": "72%"}}), &AliasTable::default());
    assert!(ok.is_exact());
}

#[test]
fn micro_average_example() {
    let m = layer2_metrics(&[report(3, 4, 3, 3), report(1, 2, 2, 1)]);
    assert_eq!(m.precision, 4.0 / 6.0);
    assert_eq!(m.recall, 4.0 / 5.0);
    let f1 = 2.0 * (4.0 / 6.0) * (4.0 / 5.0) / (4.0 / 6.0 + 4.0 / 5.0);
    assert!((m.f1 - f1).abs() < 1e-12);
    let empty = layer2_metrics(&[report(0, 0, 3, 0)]);
    assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));
}

#[test]
fn layer1_confusion_examples() {
    let labels: Vec<bool> = (0..10).map(|i| i < 6).collect();
    let all_yes = vec![true; 10];
    let m = layer1_metrics(&labels, &all_yes).unwrap();
    assert_eq!((m.recall, m.precision, m.accuracy), (1.0, 0.6, 0.6));
    let m = layer1_metrics(&labels, &labels).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    let inverted: Vec<bool> = labels.iter().map(|l| !l).collect();
    let m = layer1_metrics(&labels, &inverted).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.0, 0.0, 0.0, 0.0));
    // hand matrix: tp 4, fn 2, fp 1, tn 3
    let preds = [true, true, true, true, false, false, true, false, false, false];
    let m = layer1_metrics(&labels, &preds).unwrap();
    assert_eq!(m.accuracy, 0.7);
    assert_eq!(m.precision, 0.8);
    assert_eq!(m.recall, 4.0 / 6.0);
    assert!(layer1_metrics(&labels, &preds[..3]).is_err());
}

#[test]
fn readability_hand_computations() {
    let s = text_stats("The cat sat. The dog ran.");
    assert_eq!((s.words, s.sentences, s.syllables), (6, 2, 6));
    // 206.835 - 1.015 * 3 - 84.6 * 1
    assert!((s.reading_ease() - 119.19).abs() < 1e-9);

    let five = "Your glucose was steady today. Most readings stayed in range. \
                You had one low after lunch. The night was calm. Keep up the good work.";
    let s = text_stats(five);
    assert_eq!((s.words, s.sentences, s.syllables), (25, 5, 30));
    // 206.835 - 1.015 * 5 - 84.6 * 1.2 and 0.39 * 5 + 11.8 * 1.2 - 15.59
    assert!((s.reading_ease() - 100.24).abs() < 5e-4);
    assert!((s.grade() - 0.52).abs() < 5e-4);

    let r = readability(&["", "   ", "The cat sat. The dog ran."]).unwrap();
    assert_eq!(r.n, 1);
    assert_eq!(r.avg_words, 6.0);
    assert!(readability(&["", " "]).is_none());

    let one = text_stats("The cat sat and the dog ran.");
    let two = text_stats("The cat sat. The dog ran.");
    assert!(one.reading_ease() < two.reading_ease());
}

#[test]
fn latency_examples() {
    let runs: Vec<RunRecord> = (1..=100).map(|i| run(&format!("i{i}"), Payload::new(), None, f64::from(i) * 1000.0)).collect();
    let l = latency_stats(&runs).unwrap();
    assert_eq!(l.p95_s, 95.0);
    assert_eq!(l.median_s, 50.5);
    assert_eq!(l.mean_s, 50.5);
    assert_eq!(l.mean_backend_calls, 4.0);
    let single = latency_stats(&runs[..1]).unwrap();
    assert_eq!((single.mean_s, single.median_s, single.p95_s), (1.0, 1.0, 1.0));
    let flat: Vec<RunRecord> = (0..7).map(|i| run(&format!("c{i}"), Payload::new(), None, 2500.0)).collect();
    let l = latency_stats(&flat).unwrap();
    assert_eq!((l.mean_s, l.median_s, l.p95_s), (2.5, 2.5, 2.5));
    assert!(latency_stats(&[]).is_none());
}

fn generated(n: usize, seed: u64) -> Vec<BenchmarkItem> {
    let spec = SynthSpec {
        subject_id: "e1".into(),
        start_date: NaiveDate::from_ymd_opt(2024, 5, 6).unwrap(),
        days: 21,
        rate_minutes: 5,
        base_level: 150.0,
        variability: 40.0,
        missing_days: vec![3],
        missing_sample_fraction: 0.1,
        seed,
    };
    let data = Arc::new(LocalData::new(synthesize_series::<f64>(&spec).unwrap()));
    instantiate_templates(
        &default_templates(),
        &[data],
        &cgm_registry(SandboxConfig::default()),
        &GenerationConfig::new(n, Mix::standard(), seed),
    )
    .unwrap()
}

#[test]
fn evaluate_end_to_end_report() {
    let items = generated(30, 3);
    let runs: Vec<RunRecord> = items
        .iter()
        .map(|i| run(&i.id, i.ground_truth.clone(), Some(i.is_answerable), 1000.0))
        .collect();
    let opts = EvalOptions { layer: LayerSelection::All, readability: true, latency: true };
    let r = evaluate(&items, &runs, &opts, &AliasTable::default());
    let l1 = r.layer1.unwrap();
    assert_eq!(l1.accuracy, 1.0);
    let l2 = r.layer2.unwrap();
    assert_eq!((l2.precision, l2.recall, l2.f1, l2.value_accuracy), (1.0, 1.0, 1.0, 1.0));
    assert!(r.bypass_violations.is_empty());
    assert!(r.readability.is_some() && r.latency.is_some());
    assert!(r.to_table().contains("layer 2 (all)"));

    let only_l1 = evaluate(&items, &runs[..10], &EvalOptions { layer: LayerSelection::One, ..Default::default() }, &AliasTable::default());
    assert!(only_l1.layer2.is_none());
    assert_eq!(only_l1.runs_missing.len(), 20);
}

#[test]
fn bypass_violations_are_reported() {
    let items = generated(12, 5);
    let target = items.iter().find(|i| i.is_answerable).unwrap();
    let mut bad = run(&target.id, Payload::new(), Some(false), 10.0);
    bad.tool_calls = target.procedure.clone();
    let r = evaluate(&items, &[bad], &EvalOptions::default(), &AliasTable::default());
    assert_eq!(r.bypass_violations, vec![target.id.clone()]);
}

#[test]
fn scripted_judge_matches_deterministic_scores() {
    let items: Vec<BenchmarkItem> = generated(20, 8).into_iter().filter(|i| i.is_answerable).collect();
    let aliases = AliasTable::default();
    let agent: Vec<Payload> = items
        .iter()
        .map(|i| {
            let mut p = i.ground_truth.clone();
            if let Some(row) = p.values_mut().next() {
                if let Some(v) = row.values_mut().next() {
                    *v += 50.0;
                }
            }
            p
        })
        .collect();
    let det: Vec<CallMatchReport> = items.iter().zip(&agent).map(|(i, a)| match_calls(i, a, &aliases)).collect();
    let mut judge = ScriptedBackend::new(Vec::new());
    for (i, r) in items.iter().zip(&det) {
        judge.push(cgmqa_core::agent::ScriptRule::new(Layer::Judge, Pattern::Exact(i.id.clone()), Reply::Json(serde_json::to_value(r).unwrap())));
    }
    let prompts = PromptSet::default();
    let llm: Vec<CallMatchReport> = items
        .iter()
        .zip(&agent)
        .map(|(i, a)| judge_item(&judge, &prompts, i, a).unwrap())
        .collect();
    assert_eq!(layer2_metrics(&det), layer2_metrics(&llm));
    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let agreement = compare_judges(&ids, &det, &llm);
    assert_eq!(agreement.mae_value_accuracy, 0.0);

    let perfect: Vec<CallMatchReport> = items.iter().map(|i| match_calls(i, &i.ground_truth, &aliases)).collect();
    let agreement = compare_judges(&ids, &det, &perfect);
    let expected = det.iter().map(|r| 1.0 - r.value_accuracy()).sum::<f64>() / det.len() as f64;
    assert!((agreement.mae_value_accuracy - expected).abs() < 1e-12);
    assert!(agreement.mae_value_accuracy > 0.0);
}

#[test]
fn malformed_judge_reply_is_rejected() {
    let it = item(json!({"2024-01-05": {"tir_pct": 72.0}}), &[]);
    let prompts = PromptSet::default();
    let judge = ScriptedBackend::new(Vec::new()).with(Layer::Judge, Pattern::Any, Reply::Text("looks right to me".into()));
    assert!(matches!(judge_item(&judge, &prompts, &it, &it.ground_truth), Err(JudgeError::Schema(_))));
    let judge = ScriptedBackend::new(Vec::new()).with(
        Layer::Judge,
        Pattern::Any,
        Reply::Json(json!({"num_gt_features": 1, "num_agent_features": 1, "num_overlap": 3,
            "features_in_gt_not_in_agent": [], "features_in_agent_not_in_gt": [], "feature_value_comparison": {}})),
    );
    assert!(matches!(judge_item(&judge, &prompts, &it, &it.ground_truth), Err(JudgeError::Schema(_))));
}

fn arb_report() -> impl Strategy<Value = CallMatchReport> {
    (0usize..8, 0usize..8, 0usize..8).prop_flat_map(|(o, extra_a, extra_g)| {
        (0..=o).prop_map(move |m| report(o, o + extra_a, o + extra_g, m))
    })
}

proptest! {
    #[test]
    fn tolerance_symmetric_inside_band(a in 0.5f64..500.0, rel in 0.0f64..0.0099) {
        let aliases = AliasTable::default();
        let b = a * (1.0 + rel);
        if (a - b).abs() <= 0.01 * a.min(b) {
            prop_assert!(value_match(a, Some(b), "mean_glucose", &aliases));
            prop_assert!(value_match(b, Some(a), "mean_glucose", &aliases));
        }
    }

    #[test]
    fn micro_average_concatenation(xs in prop::collection::vec(arb_report(), 1..12), ys in prop::collection::vec(arb_report(), 1..12)) {
        let all: Vec<CallMatchReport> = xs.iter().chain(&ys).cloned().collect();
        let m = layer2_metrics(&all);
        let sum = |f: &dyn Fn(&CallMatchReport) -> usize| xs.iter().map(f).sum::<usize>() + ys.iter().map(f).sum::<usize>();
        let overlap = sum(&|r| r.num_overlap) as f64;
        let agent = sum(&|r| r.num_agent_features) as f64;
        let gt = sum(&|r| r.num_gt_features) as f64;
        let matched = sum(&|r| r.matched_values()) as f64;
        let compared = sum(&|r| r.feature_value_comparison.len()) as f64;
        let p = if agent == 0.0 { 0.0 } else { overlap / agent };
        let r = if gt == 0.0 { 0.0 } else { overlap / gt };
        let va = if compared == 0.0 { 0.0 } else { matched / compared };
        prop_assert_eq!(m.precision, p);
        prop_assert_eq!(m.recall, r);
        prop_assert_eq!(m.value_accuracy, va);
        prop_assert!(m.precision <= 1.0 && m.recall <= 1.0 && m.f1 <= 1.0);
    }

    #[test]
    fn overlap_bounded_by_counts(gt in prop::collection::btree_map("[a-c]", prop_oneof![Just(-1.0f64), 0.0f64..200.0], 1..4),
                                 ag in prop::collection::btree_map("[a-e]", 0.0f64..200.0, 0..5)) {
        let names = ["tir_pct", "mean_glucose", "hypo_events", "cv_pct", "weartime_pct"];
        let rename = |k: &String| names[(k.as_bytes()[0] - b'a') as usize].to_string();
        let it = item(json!({"2024-01-05": gt.iter().map(|(k, v)| (rename(k), *v)).collect::<BTreeMap<_, _>>()}), &[]);
        let agent = payload(json!({"2024-01-05": ag.iter().map(|(k, v)| (rename(k), *v)).collect::<BTreeMap<_, _>>()}));
        let r = match_calls(&it, &agent, &AliasTable::default());
        prop_assert!(r.num_overlap <= r.num_gt_features.min(r.num_agent_features));
        prop_assert_eq!(r.num_overlap + r.features_in_gt_not_in_agent.len(), r.num_gt_features);
        for f in &r.features_in_gt_not_in_agent {
            prop_assert!(!r.feature_value_comparison.contains_key(f));
        }
        for f in &r.features_in_agent_not_in_gt {
            prop_assert!(!r.feature_value_comparison.contains_key(f));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn ground_truth_scores_perfectly_against_itself(seed in 0u64..1000) {
        let items = generated(25, seed);
        let aliases = AliasTable::default();
        let reports: Vec<CallMatchReport> = items
            .iter()
            .filter(|i| i.is_answerable)
            .map(|i| match_calls(i, &i.ground_truth, &aliases))
            .collect();
        let m = layer2_metrics(&reports);
        prop_assert_eq!((m.precision, m.recall, m.f1, m.value_accuracy, m.accuracy), (1.0, 1.0, 1.0, 1.0, 1.0));
    }
}
