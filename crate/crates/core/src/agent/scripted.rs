//! Replay backend for tests and benchmark runs without a model.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::response::{refusal_text, summarize};
use super::{payload_from_json, BackendError, CompletionRequest, Layer, LlmBackend, Role};
use crate::sandbox::{merge_unconsumed, ToolCall, ToolResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Matches when the request focus equals the text.
    Exact(String),
    /// Matches when the focus contains the text.
    Contains(String),
    Any,
}

impl Pattern {
    /// Match strength; longer patterns beat shorter ones, exact beats contains.
    fn strength(&self, focus: &str) -> Option<usize> {
        match self {
            Pattern::Exact(s) if s == focus => Some(usize::MAX / 2 + s.len()),
            Pattern::Contains(s) if focus.contains(s.as_str()) => Some(1 + s.len()),
            Pattern::Any => Some(0),
            _ => None,
        }
    }

    fn describe(&self) -> String {
        match self {
            Pattern::Exact(s) => format!("={s}"),
            Pattern::Contains(s) => format!("~{s}"),
            Pattern::Any => "*".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Json(Value),
    Text(String),
    /// Emits the calls in order, one per executor turn, then reports the
    /// merged payload of the results no later call consumed.
    ToolSequence(Vec<ToolCall>),
    /// Generator reply computed from the request context.
    Summarize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub layer: Layer,
    pub pattern: Pattern,
    pub reply: Reply,
}

impl ScriptRule {
    pub fn new(layer: Layer, pattern: Pattern, reply: Reply) -> Self {
        Self { layer, pattern, reply }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    /// Reads a JSON array of rules, e.g.
    /// `[{"layer": "router", "pattern": {"contains": "TIR"}, "reply": {"json": {..}}}]`.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text).map(Self::new)
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }

    pub fn push(&mut self, rule: ScriptRule) {
        self.rules.push(rule);
    }

    pub fn with(mut self, layer: Layer, pattern: Pattern, reply: Reply) -> Self {
        self.push(ScriptRule::new(layer, pattern, reply));
        self
    }

    fn select(&self, req: &CompletionRequest) -> Result<&Reply, BackendError> {
        let mut best: Option<(usize, &ScriptRule)> = None;
        let mut tied: Vec<&ScriptRule> = Vec::new();
        for rule in self.rules.iter().filter(|r| r.layer == req.layer) {
            let Some(s) = rule.pattern.strength(&req.focus) else {
                continue;
            };
            match best {
                Some((b, _)) if s < b => {}
                Some((b, _)) if s == b => tied.push(rule),
                _ => {
                    best = Some((s, rule));
                    tied = vec![rule];
                }
            }
        }
        let Some((_, chosen)) = best else {
            return Err(BackendError::ScriptMiss {
                layer: req.layer,
                focus: req.focus.clone(),
            });
        };
        if tied.iter().any(|r| r.reply != chosen.reply) {
            return Err(BackendError::AmbiguousScript(
                tied.iter().map(|r| r.pattern.describe()).collect(),
            ));
        }
        Ok(&chosen.reply)
    }
}

pub(super) fn tool_sequence(calls: &[ToolCall], req: &CompletionRequest) -> Result<String, BackendError> {
    let results: Vec<ToolResult> = req
        .messages
        .iter()
        .filter(|m| m.role == Role::Tool)
        .filter_map(|m| serde_json::from_str(&m.content).ok())
        .collect();
    let turn = req.messages.iter().filter(|m| m.role == Role::Tool).count();
    if let Some(call) = calls.get(turn) {
        return Ok(json!({"tool_call": call}).to_string());
    }
    Ok(json!({"result": merge_unconsumed(&results)}).to_string())
}

pub(super) fn summarize_context(ctx: &Value) -> Result<String, BackendError> {
    if ctx.get("is_answerable").and_then(Value::as_bool) == Some(false) {
        let rationale = ctx.get("rationale").and_then(Value::as_str).unwrap_or_default();
        return Ok(json!({"final_response": refusal_text(rationale), "cited_period": null}).to_string());
    }
    let payload = ctx
        .get("payload")
        .map(payload_from_json)
        .transpose()
        .map_err(BackendError::Malformed)?
        .unwrap_or_default();
    let (text, period) = summarize(&payload);
    Ok(json!({"final_response": text, "cited_period": period}).to_string())
}

impl LlmBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        match self.select(req)? {
            Reply::Json(v) => Ok(v.to_string()),
            Reply::Text(t) => Ok(t.clone()),
            Reply::ToolSequence(calls) => tool_sequence(calls, req),
            Reply::Summarize => summarize_context(&req.context),
        }
    }
}
