//! Runs the agent pipeline over a benchmark and records what it did.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BenchError, BenchmarkItem};
use crate::agent::{Layer, LlmBackend, Pipeline, PipelineConfig, Trace, UserQuery};
use crate::sandbox::{LocalData, Payload, ToolCall, ToolRegistry};

pub const RUN_SCHEMA: &str = "cgmqa-run";

/// One item's outcome. Raw readings never appear here: payloads are
/// aggregates and traces hold only prompts built from aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub item_id: String,
    pub subject_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_layer: Option<Layer>,
    /// None when the input processor was skipped.
    #[serde(default)]
    pub predicted_answerable: Option<bool>,
    #[serde(default)]
    pub refined_question: Option<String>,
    pub payload: Payload,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub is_refusal: bool,
    pub tool_calls: Vec<ToolCall>,
    pub latency_ms: f64,
    pub layer_latency_ms: BTreeMap<Layer, f64>,
    pub backend_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Box<Trace>>,
}

impl RunRecord {
    fn from_trace(item: &BenchmarkItem, trace: Trace, error: Option<(Layer, String)>, keep: bool) -> Self {
        Self {
            item_id: item.id.clone(),
            subject_id: item.subject_id.clone(),
            ok: error.is_none(),
            error_layer: error.as_ref().map(|e| e.0),
            error: error.map(|e| e.1),
            predicted_answerable: trace.refined.as_ref().map(|r| r.is_answerable),
            refined_question: trace.refined.as_ref().map(|r| r.refined_question.clone()),
            payload: trace.payload.clone(),
            response: trace.response.as_ref().map(|r| r.text.clone()),
            is_refusal: trace.response.as_ref().is_some_and(|r| r.is_refusal),
            tool_calls: trace.tool_trace().into_iter().cloned().collect(),
            latency_ms: trace.total_latency_ms,
            layer_latency_ms: trace.layer_latency_ms.clone(),
            backend_calls: trace.backend_calls,
            trace: keep.then(|| Box::new(trace)),
        }
    }

    fn missing_subject(item: &BenchmarkItem) -> Self {
        Self {
            item_id: item.id.clone(),
            subject_id: item.subject_id.clone(),
            ok: false,
            error: Some(format!("no data loaded for subject `{}`", item.subject_id)),
            error_layer: None,
            predicted_answerable: None,
            refined_question: None,
            payload: Payload::new(),
            response: None,
            is_refusal: false,
            tool_calls: Vec::new(),
            latency_ms: 0.0,
            layer_latency_ms: BTreeMap::new(),
            backend_calls: 0,
            trace: None,
        }
    }
}

/// Answers clarification questions from the item's own parameters.
pub fn simulated_user(item: &BenchmarkItem) -> impl Fn(&str) -> Option<String> + Send + Sync + '_ {
    move |_question: &str| {
        if item.params.is_empty() {
            None
        } else {
            Some(format!("I mean {}", item.params.values().cloned().collect::<Vec<_>>().join(", ")))
        }
    }
}

fn run_one<F>(
    item: &BenchmarkItem,
    subjects: &BTreeMap<String, Arc<LocalData>>,
    registry: &Arc<ToolRegistry>,
    make_backend: &F,
    config: &PipelineConfig,
    keep_traces: bool,
) -> RunRecord
where
    F: Fn(&BenchmarkItem) -> Arc<dyn LlmBackend> + Sync,
{
    let Some(data) = subjects.get(&item.subject_id) else {
        return RunRecord::missing_subject(item);
    };
    let pipeline = Pipeline::new(make_backend(item), registry.clone(), data.clone()).with_config(config.clone());
    let query = UserQuery::new(item.question.clone(), item.reference_datetime);
    let responder = simulated_user(item);
    match pipeline.ask(&query, &responder) {
        Ok(bundle) => RunRecord::from_trace(item, bundle.trace, None, keep_traces),
        Err(f) => RunRecord::from_trace(item, *f.trace, Some((f.layer, f.message)), keep_traces),
    }
}

/// Runs every item on up to `jobs` threads. Records come back in item
/// order whatever order they finish in.
pub fn run_benchmark<F>(
    items: &[BenchmarkItem],
    subjects: &BTreeMap<String, Arc<LocalData>>,
    registry: Arc<ToolRegistry>,
    make_backend: F,
    config: &PipelineConfig,
    jobs: usize,
    keep_traces: bool,
) -> Vec<RunRecord>
where
    F: Fn(&BenchmarkItem) -> Arc<dyn LlmBackend> + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<RunRecord>> = vec![None; items.len()];
    let done: Vec<(usize, RunRecord)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(item) = items.get(i) else { break };
                        out.push((i, run_one(item, subjects, &registry, &make_backend, config, keep_traces)));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("run thread panicked"))
            .collect()
    });
    for (i, r) in done {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every item ran")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RunHeader {
    schema: String,
    version: u32,
    count: usize,
}

pub fn write_runs<W: Write>(records: &[RunRecord], writer: W) -> Result<(), BenchError> {
    let mut w = BufWriter::new(writer);
    serde_json::to_writer(&mut w, &RunHeader { schema: RUN_SCHEMA.into(), version: 1, count: records.len() })?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs<R: Read>(reader: R) -> Result<Vec<RunRecord>, BenchError> {
    let mut lines = BufReader::new(reader).lines();
    let header: RunHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(BenchError::Format("missing run header".into())),
    };
    if header.schema != RUN_SCHEMA {
        return Err(BenchError::Format(format!("expected {RUN_SCHEMA}, found {}", header.schema)));
    }
    let mut out = Vec::with_capacity(header.count);
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
