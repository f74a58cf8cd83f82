//! Three-layer question-answering pipeline over the tool sandbox.
//!
//! Layer 1 checks feasibility and rewrites the question, layer 2 routes it
//! into sub-tasks and runs a tool-call loop per task, layer 3 writes the
//! answer. Every model interaction goes through [`LlmBackend`].

mod http;
mod local;
mod pipeline;
mod prompts;
mod response;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::sandbox::Payload;
use crate::scalar::SENTINEL;

pub use http::{parse_completion, HttpBackend, HttpConfig, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};
pub use local::LocalBackend;
pub use pipeline::{
    all_missing, AnswerBundle, ClarificationResponder, Exchange, Pipeline, PipelineConfig, PipelineFailure,
    PipelineOutcome, TaskTrace, ToolCallRecord, Trace,
};
pub use prompts::{PromptSet, PROMPT_FILES};
pub use response::{cited_period, key_period, describe_payload, insufficient_data_response, refusal_text, summarize};
pub use scripted::{Pattern, Reply, ScriptRule, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Clarifier,
    InputProcessor,
    Router,
    Executor,
    Generator,
    Judge,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Clarifier => "clarifier",
            Layer::InputProcessor => "input_processor",
            Layer::Router => "router",
            Layer::Executor => "executor",
            Layer::Generator => "generator",
            Layer::Judge => "judge",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
        }
    }
}

/// One model call.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub layer: Layer,
    pub system: String,
    pub messages: Vec<Message>,
    /// The text the layer is working on (question, refined question,
    /// sub-task). Test doubles key their replies on it.
    pub focus: String,
    /// Structured inputs already rendered into the messages.
    pub context: Value,
    pub temperature: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no scripted reply for {layer} prompt `{focus}`")]
    ScriptMiss { layer: Layer, focus: String },
    #[error("ambiguous script: patterns {0:?} tie")]
    AmbiguousScript(Vec<String>),
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// A chat-completion model. Implementations must be safe to call concurrently.
pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserQuery {
    pub text: String,
    pub reference_datetime: NaiveDateTime,
    #[serde(default)]
    pub session_id: Option<String>,
}

impl UserQuery {
    pub fn new(text: impl Into<String>, reference_datetime: NaiveDateTime) -> Self {
        Self {
            text: text.into(),
            reference_datetime,
            session_id: None,
        }
    }

    pub fn reference_date(&self) -> NaiveDate {
        self.reference_datetime.date()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedQuery {
    pub is_answerable: bool,
    pub refined_question: String,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    #[serde(default)]
    pub date_list: Vec<String>,
    pub question_list: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResponse {
    pub text: String,
    #[serde(default)]
    pub cited_period: Option<String>,
    pub is_refusal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationTurn {
    pub agent_question: String,
    pub user_answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tone {
    #[default]
    Empathetic,
    Neutral,
    Concise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    #[default]
    Layperson,
    Clinical,
}

/// Converts a model-written result object into a payload. Booleans become
/// 1/0, nulls become -1, non-numeric leaves are rejected.
pub fn payload_from_json(v: &Value) -> Result<Payload, String> {
    let obj = v.as_object().ok_or("result must be an object")?;
    let mut out = Payload::new();
    for (key, inner) in obj {
        let inner = inner
            .as_object()
            .ok_or_else(|| format!("result[{key}] must be an object of features"))?;
        let mut row = BTreeMap::new();
        for (feature, value) in inner {
            let x = match value {
                Value::Number(n) => n.as_f64().ok_or("non-finite number")?,
                Value::Bool(b) => f64::from(u8::from(*b)),
                Value::Null => SENTINEL,
                Value::String(s) => s
                    .trim()
                    .trim_end_matches('%')
                    .parse()
                    .map_err(|_| format!("non-numeric value for {key}.{feature}"))?,
                _ => return Err(format!("non-numeric value for {key}.{feature}")),
            };
            row.insert(feature.clone(), x);
        }
        out.insert(key.clone(), row);
    }
    Ok(out)
}

/// Extracts the first JSON object from model text (tolerates code fences and
/// surrounding prose).
pub fn extract_json(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        if v.is_object() {
            return Some(v);
        }
    }
    let start = trimmed.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in trimmed[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return serde_json::from_str(&trimmed[start..=start + i]).ok();
                }
            }
            _ => {}
        }
    }
    None
}
