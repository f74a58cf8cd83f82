use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use cgmqa_core::agent::{ClarificationTurn, FinalResponse, Layer, Trace, UserQuery};
use cgmqa_core::sandbox::Payload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnRole {
    User,
    Agent,
    Clarification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: TurnRole,
    pub text: String,
    pub at: NaiveDateTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cited_period: Option<String>,
    #[serde(default)]
    pub is_refusal: bool,
}

/// A question waiting on the user's clarification reply.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingQuery {
    pub query: UserQuery,
    pub agent_question: String,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub session_id: String,
    pub subject_id: String,
    pub created_at: NaiveDateTime,
    history: Vec<Turn>,
    pub pending: Option<PendingQuery>,
}

impl Session {
    pub fn new(session_id: String, subject_id: String, created_at: NaiveDateTime) -> Self {
        Self {
            session_id,
            subject_id,
            created_at,
            history: Vec::new(),
            pending: None,
        }
    }

    /// Append-only.
    pub fn push(&mut self, turn: Turn) {
        self.history.push(turn);
    }

    pub fn history(&self) -> &[Turn] {
        &self.history
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSummary {
    pub name: String,
    pub arguments: Value,
    pub ok: bool,
    pub latency_ms: f64,
}

/// What the client sees of a run: tools used, periods and timings. Payloads
/// are the aggregated metrics that already crossed the sandbox boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_answerable: Option<bool>,
    pub clarifications: Vec<ClarificationTurn>,
    pub periods: Vec<String>,
    pub tools: Vec<ToolSummary>,
    pub payload: Payload,
    pub layer_latency_ms: BTreeMap<Layer, f64>,
    pub total_latency_ms: f64,
    pub backend_calls: usize,
}

impl TraceSummary {
    pub fn from_trace(trace: &Trace) -> Self {
        Self {
            refined_question: trace.refined.as_ref().map(|r| r.refined_question.clone()),
            is_answerable: trace.refined.as_ref().map(|r| r.is_answerable),
            clarifications: trace.clarifications.clone(),
            periods: trace.tasks.iter().map(|t| t.date.clone()).filter(|d| !d.is_empty()).collect(),
            tools: trace
                .tasks
                .iter()
                .flat_map(|t| &t.tool_calls)
                .map(|r| ToolSummary {
                    name: r.call.name.clone(),
                    arguments: Value::Object(r.call.arguments.clone()),
                    ok: r.ok,
                    latency_ms: r.latency_ms,
                })
                .collect(),
            payload: trace.payload.clone(),
            layer_latency_ms: trace.layer_latency_ms.clone(),
            total_latency_ms: trace.total_latency_ms,
            backend_calls: trace.backend_calls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MessageReply {
    Answer { response: FinalResponse, trace: TraceSummary },
    Clarification { question: String },
}
