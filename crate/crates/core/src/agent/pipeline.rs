use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompts::PromptSet;
use super::response::{cited_period, insufficient_data_response};
use super::{
    extract_json, payload_from_json, ClarificationTurn, Complexity, CompletionRequest, FinalResponse, Layer,
    LlmBackend, Message, RefinedQuery, TaskPlan, Tone, UserQuery,
};
use crate::metrics::Feature;
use crate::sandbox::{LocalData, Payload, SandboxError, ToolCall, ToolRegistry, Workspace};
use crate::scalar::SENTINEL;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// When false the question goes straight to the router with a date
    /// prefix (ablation mode).
    pub use_input_processor: bool,
    pub interactive: bool,
    pub max_clarification_rounds: usize,
    pub max_steps: usize,
    pub max_unknown_tools: usize,
    pub temperature: f64,
    pub tone: Tone,
    pub complexity: Complexity,
    pub concurrent_tasks: bool,
    /// Keep every prompt and reply in the trace.
    pub record_exchanges: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            use_input_processor: true,
            interactive: false,
            max_clarification_rounds: 1,
            max_steps: 12,
            max_unknown_tools: 3,
            temperature: 1.0,
            tone: Tone::default(),
            complexity: Complexity::default(),
            concurrent_tasks: true,
            record_exchanges: true,
        }
    }
}

/// Answers clarification questions; `None` declines.
pub type ClarificationResponder<'a> = dyn Fn(&str) -> Option<String> + Send + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub call: ToolCall,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub layer: Layer,
    pub prompt: String,
    pub reply: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub date: String,
    pub question: String,
    pub tool_calls: Vec<ToolCallRecord>,
    pub payload: Payload,
    pub backend_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub query: UserQuery,
    pub clarifications: Vec<ClarificationTurn>,
    /// Absent when the input processor is disabled.
    pub refined: Option<RefinedQuery>,
    pub plan: Option<TaskPlan>,
    pub tasks: Vec<TaskTrace>,
    pub payload: Payload,
    pub response: Option<FinalResponse>,
    pub layer_latency_ms: BTreeMap<Layer, f64>,
    pub total_latency_ms: f64,
    pub backend_calls: usize,
    #[serde(default)]
    pub exchanges: Vec<Exchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trace {
    fn new(query: &UserQuery) -> Self {
        Self {
            query: query.clone(),
            clarifications: Vec::new(),
            refined: None,
            plan: None,
            tasks: Vec::new(),
            payload: Payload::new(),
            response: None,
            layer_latency_ms: BTreeMap::new(),
            total_latency_ms: 0.0,
            backend_calls: 0,
            exchanges: Vec::new(),
            error: None,
        }
    }

    pub fn tool_trace(&self) -> Vec<&ToolCall> {
        self.tasks.iter().flat_map(|t| t.tool_calls.iter().map(|r| &r.call)).collect()
    }

    pub fn num_tool_calls(&self) -> usize {
        self.tasks.iter().map(|t| t.tool_calls.len()).sum()
    }

    /// Every prompt sent to a backend, concatenated.
    pub fn prompt_text(&self) -> String {
        self.exchanges.iter().map(|e| e.prompt.as_str()).collect::<Vec<_>>().join("\n")
    }

    fn add_latency(&mut self, layer: Layer, ms: f64) {
        *self.layer_latency_ms.entry(layer).or_default() += ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerBundle {
    pub response: FinalResponse,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineOutcome {
    Answer(Box<AnswerBundle>),
    Clarify { question: String },
}

/// A layer failed; the trace up to the failure is kept.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{layer} failed: {message}")]
pub struct PipelineFailure {
    pub layer: Layer,
    pub message: String,
    pub trace: Box<Trace>,
}

#[derive(Deserialize)]
struct ClarifierReply {
    needs_clarification: bool,
    #[serde(default)]
    question: String,
}

#[derive(Deserialize)]
struct GeneratorReply {
    final_response: String,
    #[serde(default)]
    cited_period: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum ExecutorReply {
    ToolCall(ToolCall),
    Result(Value),
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

fn render_prompt(req: &CompletionRequest) -> String {
    let mut s = req.system.clone();
    for m in &req.messages {
        s.push_str(&format!("\n[{:?}] {}", m.role, m.content));
    }
    s
}

/// Model calls made on behalf of one layer or task.
struct CallLog<'a> {
    backend: &'a dyn LlmBackend,
    record: bool,
    temperature: f64,
    exchanges: Vec<Exchange>,
    calls: usize,
}

impl<'a> CallLog<'a> {
    fn new(pipeline: &'a Pipeline) -> Self {
        Self {
            backend: pipeline.backend.as_ref(),
            record: pipeline.config.record_exchanges,
            temperature: pipeline.config.temperature,
            exchanges: Vec::new(),
            calls: 0,
        }
    }

    fn complete(
        &mut self,
        layer: Layer,
        system: &str,
        messages: &[Message],
        focus: &str,
        context: &Value,
    ) -> Result<String, String> {
        let req = CompletionRequest {
            layer,
            system: system.to_string(),
            messages: messages.to_vec(),
            focus: focus.to_string(),
            context: context.clone(),
            temperature: self.temperature,
        };
        let started = Instant::now();
        let reply = self.backend.complete(&req);
        self.calls += 1;
        if self.record {
            self.exchanges.push(Exchange {
                layer,
                prompt: render_prompt(&req),
                reply: reply.as_ref().map_or_else(|e| format!("<error: {e}>"), Clone::clone),
                latency_ms: ms(started),
            });
        }
        reply.map_err(|e| e.to_string())
    }

    /// One reparse retry when the reply does not fit the layer schema.
    fn structured<T: DeserializeOwned>(
        &mut self,
        layer: Layer,
        system: &str,
        messages: &[Message],
        focus: &str,
        context: &Value,
    ) -> Result<T, String> {
        let mut messages = messages.to_vec();
        let mut last_error = String::new();
        for _ in 0..2 {
            let reply = self.complete(layer, system, &messages, focus, context)?;
            match extract_json(&reply).map(serde_json::from_value::<T>) {
                Some(Ok(v)) => return Ok(v),
                Some(Err(e)) => last_error = e.to_string(),
                None => last_error = "no JSON object in reply".into(),
            }
            messages.push(Message::assistant(reply));
            messages.push(Message::user(format!(
                "That reply did not match the required JSON schema ({last_error}). Reply again with JSON only."
            )));
        }
        Err(format!("unparseable reply: {last_error}"))
    }
}

/// The three-layer pipeline bound to one subject's data. Shareable across
/// threads; each call keeps its own workspace.
pub struct Pipeline {
    backend: Arc<dyn LlmBackend>,
    registry: Arc<ToolRegistry>,
    data: Arc<LocalData>,
    prompts: PromptSet,
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(backend: Arc<dyn LlmBackend>, registry: Arc<ToolRegistry>, data: Arc<LocalData>) -> Self {
        Self {
            backend,
            registry,
            data,
            prompts: PromptSet::default(),
            config: PipelineConfig::default(),
        }
    }

    pub fn with_config(mut self, config: PipelineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn data(&self) -> &Arc<LocalData> {
        &self.data
    }

    pub fn registry(&self) -> &Arc<ToolRegistry> {
        &self.registry
    }

    fn fail(layer: Layer, message: impl Into<String>, mut trace: Trace, started: Instant) -> PipelineFailure {
        let message = message.into();
        trace.error = Some(format!("{layer}: {message}"));
        trace.total_latency_ms = ms(started);
        PipelineFailure {
            layer,
            message,
            trace: Box::new(trace),
        }
    }

    fn absorb(trace: &mut Trace, log: CallLog<'_>) {
        trace.backend_calls += log.calls;
        trace.exchanges.extend(log.exchanges);
    }

    /// Asks the clarifier whether the question needs a follow-up.
    pub fn detect_ambiguity(&self, query: &UserQuery) -> Result<Option<String>, PipelineFailure> {
        let started = Instant::now();
        let mut log = CallLog::new(self);
        let system = self.prompts.render(
            Layer::Clarifier,
            &[("reference_datetime", &query.reference_datetime.to_string())],
        );
        let reply: Result<ClarifierReply, String> = log.structured(
            Layer::Clarifier,
            &system,
            &[Message::user(query.text.clone())],
            &query.text,
            &json!({"question": query.text}),
        );
        reply
            .map(|r| (r.needs_clarification && !r.question.trim().is_empty()).then_some(r.question))
            .map_err(|e| {
                let mut trace = Trace::new(query);
                Self::absorb(&mut trace, log);
                Self::fail(Layer::Clarifier, e, trace, started)
            })
    }

    /// One conversational step: a clarification question while rounds remain
    /// and interactive mode is on, otherwise the answer.
    pub fn step(
        &self,
        query: &UserQuery,
        clarifications: &[ClarificationTurn],
    ) -> Result<PipelineOutcome, PipelineFailure> {
        if self.config.interactive && clarifications.len() < self.config.max_clarification_rounds {
            if let Some(question) = self.detect_ambiguity(query)? {
                return Ok(PipelineOutcome::Clarify { question });
            }
        }
        self.answer_with(query, clarifications)
            .map(|b| PipelineOutcome::Answer(Box::new(b)))
    }

    /// Clarify-then-answer with a callback standing in for the user.
    pub fn ask(
        &self,
        query: &UserQuery,
        responder: &ClarificationResponder<'_>,
    ) -> Result<AnswerBundle, PipelineFailure> {
        let mut turns = Vec::new();
        while self.config.interactive && turns.len() < self.config.max_clarification_rounds {
            let Some(question) = self.detect_ambiguity(query)? else {
                break;
            };
            let Some(answer) = responder(&question) else {
                break;
            };
            turns.push(ClarificationTurn {
                agent_question: question,
                user_answer: answer,
            });
        }
        self.answer_with(query, &turns)
    }

    pub fn answer(&self, query: &UserQuery) -> Result<AnswerBundle, PipelineFailure> {
        self.answer_with(query, &[])
    }

    pub fn answer_with(
        &self,
        query: &UserQuery,
        clarifications: &[ClarificationTurn],
    ) -> Result<AnswerBundle, PipelineFailure> {
        let started = Instant::now();
        let mut trace = Trace::new(query);
        trace.clarifications = clarifications.to_vec();

        let refined = if self.config.use_input_processor {
            let t = Instant::now();
            let mut log = CallLog::new(self);
            let r = self.refine(&mut log, query, clarifications);
            Self::absorb(&mut trace, log);
            trace.add_latency(Layer::InputProcessor, ms(t));
            let r = r.map_err(|e| Self::fail(Layer::InputProcessor, e, trace.clone(), started))?;
            trace.refined = Some(r.clone());
            r
        } else {
            RefinedQuery {
                is_answerable: true,
                refined_question: format!("Today is {}. User Question: {}", query.reference_date(), query.text),
                rationale: String::new(),
            }
        };

        if refined.is_answerable {
            let t = Instant::now();
            let mut log = CallLog::new(self);
            let plan = self.route(&mut log, &refined, query);
            Self::absorb(&mut trace, log);
            trace.add_latency(Layer::Router, ms(t));
            let plan = plan.map_err(|e| Self::fail(Layer::Router, e, trace.clone(), started))?;
            trace.plan = Some(plan.clone());

            let t = Instant::now();
            let tasks = self.run_tasks(&plan, query.reference_date());
            trace.add_latency(Layer::Executor, ms(t));
            let mut failure = None;
            for (task, log) in tasks {
                trace.backend_calls += log.0;
                trace.exchanges.extend(log.1);
                if let (None, Some(e)) = (&failure, &task.error) {
                    failure = Some(e.clone());
                }
                for (key, row) in &task.payload {
                    trace.payload.entry(key.clone()).or_default().extend(row.clone());
                }
                trace.tasks.push(task);
            }
            if let Some(e) = failure {
                return Err(Self::fail(Layer::Executor, e, trace, started));
            }
        }

        let t = Instant::now();
        let response = if refined.is_answerable && all_missing(&trace.payload) {
            let (text, period) = insufficient_data_response(&trace.payload);
            Ok(FinalResponse {
                text,
                cited_period: period,
                is_refusal: false,
            })
        } else {
            let mut log = CallLog::new(self);
            let r = self.generate(&mut log, query, &refined, &trace.payload);
            Self::absorb(&mut trace, log);
            r
        };
        trace.add_latency(Layer::Generator, ms(t));
        let response = response.map_err(|e| Self::fail(Layer::Generator, e, trace.clone(), started))?;
        trace.response = Some(response.clone());
        trace.total_latency_ms = ms(started);
        Ok(AnswerBundle { response, trace })
    }

    fn refine(
        &self,
        log: &mut CallLog<'_>,
        query: &UserQuery,
        clarifications: &[ClarificationTurn],
    ) -> Result<RefinedQuery, String> {
        let vocab: Vec<&str> = Feature::ALL.iter().map(|f| f.as_str()).collect();
        let system = self.prompts.render(
            Layer::InputProcessor,
            &[
                ("reference_date", &query.reference_date().to_string()),
                ("reference_datetime", &query.reference_datetime.to_string()),
                ("features", &vocab.join(", ")),
            ],
        );
        let mut content = format!(
            "reference_date: {}\nreference_datetime: {}\nquestion: {}",
            query.reference_date(),
            query.reference_datetime,
            query.text
        );
        let mut focus = query.text.clone();
        for turn in clarifications {
            content.push_str(&format!(
                "\nclarification asked: {}\nuser answered: {}",
                turn.agent_question, turn.user_answer
            ));
            focus.push_str(&format!("\nClarification: {}", turn.user_answer));
        }
        let modalities: Vec<&String> = self.data.modalities.keys().collect();
        let context = json!({"question": query.text, "reference_date": query.reference_date().to_string(),
            "clarifications": clarifications, "modalities": modalities});
        let mut r: RefinedQuery =
            log.structured(Layer::InputProcessor, &system, &[Message::user(content)], &focus, &context)?;
        if r.refined_question.trim().is_empty() {
            if r.is_answerable {
                return Err("empty refined question".into());
            }
            r.refined_question = r.rationale.clone();
        }
        Ok(r)
    }

    fn route(&self, log: &mut CallLog<'_>, refined: &RefinedQuery, query: &UserQuery) -> Result<TaskPlan, String> {
        let system = self.prompts.render(Layer::Router, &[]);
        let mut plan: TaskPlan = log.structured(
            Layer::Router,
            &system,
            &[Message::user(format!("Question: {}", refined.refined_question))],
            &refined.refined_question,
            &json!({"refined_question": refined.refined_question,
                "reference_date": query.reference_date().to_string()}),
        )?;
        if plan.question_list.is_empty() {
            return Err("empty task plan".into());
        }
        plan.date_list.resize(plan.question_list.len(), String::new());
        Ok(plan)
    }

    fn run_tasks(&self, plan: &TaskPlan, reference: NaiveDate) -> Vec<(TaskTrace, (usize, Vec<Exchange>))> {
        let pairs: Vec<(&String, &String)> = plan.date_list.iter().zip(&plan.question_list).collect();
        if self.config.concurrent_tasks && pairs.len() > 1 {
            std::thread::scope(|s| {
                let handles: Vec<_> = pairs
                    .iter()
                    .map(|(d, q)| s.spawn(move || self.execute_task(d, q, reference)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("task thread panicked"))
                    .collect()
            })
        } else {
            pairs.iter().map(|(d, q)| self.execute_task(d, q, reference)).collect()
        }
    }

    fn tool_catalog(&self) -> String {
        self.registry
            .catalog()
            .iter()
            .map(|s| s.to_json().to_string())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Tool-call loop for one sub-question.
    pub fn execute_task(
        &self,
        date: &str,
        question: &str,
        reference: NaiveDate,
    ) -> (TaskTrace, (usize, Vec<Exchange>)) {
        let mut log = CallLog::new(self);
        let mut task = TaskTrace {
            date: date.to_string(),
            question: question.to_string(),
            ..Default::default()
        };
        let result = self.task_loop(&mut log, &mut task, reference);
        if let Err(e) = result {
            task.error = Some(e);
        }
        task.backend_calls = log.calls;
        (task, (log.calls, log.exchanges))
    }

    fn task_loop(&self, log: &mut CallLog<'_>, task: &mut TaskTrace, reference: NaiveDate) -> Result<(), String> {
        let system = self.prompts.render(Layer::Executor, &[("tools", &self.tool_catalog())]);
        let mut messages = vec![Message::user(if task.date.is_empty() {
            format!("Sub-question: {}", task.question)
        } else {
            format!("Sub-question: {}\nDates: {}", task.question, task.date)
        })];
        let context = json!({"question": task.question, "date": task.date,
            "reference_date": reference.to_string()});
        let mut workspace = Workspace::new();
        let mut unknown = 0usize;
        let mut reparsed = false;
        loop {
            let reply = log.complete(Layer::Executor, &system, &messages, &task.question, &context)?;
            let parsed = extract_json(&reply).map(serde_json::from_value::<ExecutorReply>);
            let parsed = match parsed {
                Some(Ok(p)) => p,
                other => {
                    if reparsed {
                        return Err("executor reply did not match the schema twice".into());
                    }
                    reparsed = true;
                    let why = match other {
                        Some(Err(e)) => e.to_string(),
                        _ => "no JSON object".into(),
                    };
                    messages.push(Message::assistant(reply));
                    messages.push(Message::user(format!(
                        "Invalid reply ({why}). Reply with JSON only: a tool_call or a result."
                    )));
                    continue;
                }
            };
            match parsed {
                ExecutorReply::Result(v) => {
                    task.payload = payload_from_json(&v)?;
                    return Ok(());
                }
                ExecutorReply::ToolCall(call) => {
                    if task.tool_calls.len() >= self.config.max_steps {
                        return Err(format!("step cap of {} tool calls exceeded", self.config.max_steps));
                    }
                    let t = Instant::now();
                    let outcome = self.registry.dispatch(&call, &self.data, &mut workspace);
                    let latency_ms = ms(t);
                    messages.push(Message::assistant(reply));
                    match outcome {
                        Ok(result) => {
                            messages.push(Message::tool(result.to_json().to_string()));
                            task.tool_calls.push(ToolCallRecord {
                                call,
                                ok: true,
                                error: None,
                                latency_ms,
                            });
                        }
                        Err(e) => {
                            if matches!(e, SandboxError::UnknownTool(_)) {
                                unknown += 1;
                            }
                            messages.push(Message::tool(json!({"error": e.to_string()}).to_string()));
                            task.tool_calls.push(ToolCallRecord {
                                call,
                                ok: false,
                                error: Some(e.to_string()),
                                latency_ms,
                            });
                            if unknown >= self.config.max_unknown_tools {
                                return Err(format!("{unknown} calls to unknown tools; last: {e}"));
                            }
                        }
                    }
                }
            }
        }
    }

    fn generate(
        &self,
        log: &mut CallLog<'_>,
        query: &UserQuery,
        refined: &RefinedQuery,
        payload: &Payload,
    ) -> Result<FinalResponse, String> {
        let tone = serde_json::to_value(self.config.tone).unwrap_or_default();
        let complexity = serde_json::to_value(self.config.complexity).unwrap_or_default();
        let system = self.prompts.render(
            Layer::Generator,
            &[
                ("tone", tone.as_str().unwrap_or_default()),
                ("complexity", complexity.as_str().unwrap_or_default()),
            ],
        );
        let content = if refined.is_answerable {
            format!(
                "Question: {}\nRefined question: {}\nExecution result: {}",
                query.text,
                refined.refined_question,
                serde_json::to_string(payload).unwrap_or_default()
            )
        } else {
            format!(
                "Question: {}\nNot answerable from CGM data. Rationale: {}",
                query.text, refined.rationale
            )
        };
        let context = json!({
            "question": query.text,
            "refined_question": refined.refined_question,
            "is_answerable": refined.is_answerable,
            "rationale": refined.rationale,
            "payload": payload,
        });
        let r: GeneratorReply =
            log.structured(Layer::Generator, &system, &[Message::user(content)], &refined.refined_question, &context)?;
        let cited = if refined.is_answerable {
            r.cited_period.filter(|p| !p.trim().is_empty()).or_else(|| cited_period(payload))
        } else {
            None
        };
        Ok(FinalResponse {
            text: r.final_response,
            cited_period: cited,
            is_refusal: !refined.is_answerable,
        })
    }
}

/// True when there is nothing to report: no values, or only sentinels plus
/// the zero weartime and day counts that accompany an empty period.
pub fn all_missing(payload: &Payload) -> bool {
    let mut saw_sentinel = false;
    for (name, v) in payload.values().flat_map(|r| r.iter()) {
        if *v == SENTINEL {
            saw_sentinel = true;
        } else if !(*v == 0.0 && (name.contains("weartime") || name.starts_with("days_"))) {
            return false;
        }
    }
    saw_sentinel || payload.is_empty()
}
