//! Optional model-based judge producing the same report shape as the
//! deterministic matcher, and a comparison between two sets of verdicts.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::CallMatchReport;
use crate::agent::{extract_json, BackendError, CompletionRequest, Layer, LlmBackend, Message, PromptSet};
use crate::benchgen::BenchmarkItem;
use crate::sandbox::Payload;

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("judge reply violates the schema: {0}")]
    Schema(String),
}

/// The request sent to the judge. The focus is the item id so scripted
/// judges can key on it.
pub fn judge_request(prompts: &PromptSet, item: &BenchmarkItem, agent: &Payload) -> CompletionRequest {
    let context = json!({
        "question": item.question,
        "ground_truth": item.ground_truth,
        "agent_output": agent,
        "required_features": item.required_features,
    });
    CompletionRequest {
        layer: Layer::Judge,
        system: prompts.get(Layer::Judge).to_string(),
        messages: vec![Message::user(format!(
            "Question: {}\nGround truth: {}\nAgent output: {}\nRequired features: {}",
            item.question,
            context["ground_truth"],
            context["agent_output"],
            context["required_features"],
        ))],
        focus: item.id.clone(),
        context,
        temperature: 0.0,
    }
}

pub fn judge_item(
    backend: &dyn LlmBackend,
    prompts: &PromptSet,
    item: &BenchmarkItem,
    agent: &Payload,
) -> Result<CallMatchReport, JudgeError> {
    let reply = backend.complete(&judge_request(prompts, item, agent))?;
    let v = extract_json(&reply).ok_or_else(|| JudgeError::Schema("no JSON object".into()))?;
    let report: CallMatchReport = serde_json::from_value(v).map_err(|e| JudgeError::Schema(e.to_string()))?;
    if report.num_overlap > report.num_gt_features.min(report.num_agent_features) {
        return Err(JudgeError::Schema("overlap exceeds a feature count".into()));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeItemDelta {
    pub item_id: String,
    pub precision: f64,
    pub recall: f64,
    pub value_accuracy: f64,
}

/// Per-item absolute differences between two judges and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeAgreement {
    pub per_item: Vec<JudgeItemDelta>,
    pub mae_precision: f64,
    pub mae_recall: f64,
    pub mae_value_accuracy: f64,
}

pub fn compare_judges(ids: &[String], a: &[CallMatchReport], b: &[CallMatchReport]) -> JudgeAgreement {
    let per_item: Vec<JudgeItemDelta> = ids
        .iter()
        .zip(a.iter().zip(b))
        .map(|(id, (x, y))| JudgeItemDelta {
            item_id: id.clone(),
            precision: (x.precision() - y.precision()).abs(),
            recall: (x.recall() - y.recall()).abs(),
            value_accuracy: (x.value_accuracy() - y.value_accuracy()).abs(),
        })
        .collect();
    let n = per_item.len().max(1) as f64;
    let mean = |f: fn(&JudgeItemDelta) -> f64| per_item.iter().map(f).sum::<f64>() / n;
    JudgeAgreement {
        mae_precision: mean(|d| d.precision),
        mae_recall: mean(|d| d.recall),
        mae_value_accuracy: mean(|d| d.value_accuracy),
        per_item,
    }
}
