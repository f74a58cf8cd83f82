//! Tool registry and dispatcher: the only way anything outside the device
//! touches CGM data. Calls come in as `{name, arguments}`; results go out as
//! aggregated payloads that pass the privacy filter.

mod args;
mod audit;
mod cgm;
mod modality;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::{self, DateSelection, GlucoseSeries};
use crate::metrics::{DailyFeatureRecord, RangeThresholds};
use crate::privacy::{self, PrivacyViolation};

pub use args::{parse_dates, resolve_feature_name, Args, ParamKind};
pub use audit::{args_digest, AuditLog, AuditRecord};
pub use cgm::{cgm_registry, register_cgm_tools, CGM_TOOL_NAMES};
pub use modality::{load_event_csv, DailyTotalExecutor, EventLog, ModalityExecutor};

/// Sampling interval assumed when a series is too short to infer one.
pub const FALLBACK_RATE_MINUTES: u32 = 5;

/// `date_key -> feature -> value`.
pub type Payload = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("missing argument `{0}`")]
    MissingArgument(String),
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: String, reason: String },
    #[error("unknown artifact `{0}`")]
    UnknownArtifact(String),
    #[error("artifact `{id}` holds {found}, expected {expected}")]
    WrongArtifact {
        id: String,
        found: &'static str,
        expected: &'static str,
    },
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SandboxError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{0}` already registered")]
    DuplicateTool(String),
    #[error("tool `{name}` must be namespaced under `{modality}.`")]
    BadNamespace { name: String, modality: String },
    #[error("schema violation in `{tool}`: {reason}")]
    SchemaViolation { tool: String, reason: String },
    #[error("tool `{tool}` failed: {source}")]
    Execution {
        tool: String,
        #[source]
        source: ToolError,
    },
    #[error("privacy filter rejected `{tool}` output: {violation}")]
    Privacy {
        tool: String,
        violation: PrivacyViolation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    pub required: bool,
    pub description: &'static str,
}

impl ParamSpec {
    pub const fn required(name: &'static str, kind: ParamKind, description: &'static str) -> Self {
        Self {
            name,
            kind,
            required: true,
            description,
        }
    }

    pub const fn optional(name: &'static str, kind: ParamKind, description: &'static str) -> Self {
        Self {
            name,
            kind,
            required: false,
            description,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    /// Compact JSON description for prompts.
    pub fn to_json(&self) -> Value {
        let params: serde_json::Map<String, Value> = self
            .params
            .iter()
            .map(|p| {
                (
                    p.name.to_string(),
                    serde_json::json!({
                        "type": p.kind.type_name(),
                        "required": p.required,
                        "description": p.description,
                    }),
                )
            })
            .collect();
        serde_json::json!({"name": self.name, "description": self.description, "parameters": params})
    }

    fn validate(&self, arguments: &serde_json::Map<String, Value>) -> Result<(), String> {
        for name in arguments.keys() {
            if !self.params.iter().any(|p| p.name == name) {
                return Err(format!("unknown argument `{name}`"));
            }
        }
        for p in &self.params {
            match arguments.get(p.name).filter(|v| !v.is_null()) {
                None if p.required => return Err(format!("missing argument `{}`", p.name)),
                None => {}
                Some(v) => p.kind.check(p.name, v).map_err(|e| e.to_string())?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Map<String, Value>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, arguments: Value) -> Self {
        Self {
            name: name.into(),
            arguments: match arguments {
                Value::Object(m) => m,
                _ => serde_json::Map::new(),
            },
        }
    }
}

/// What an executor hands back before the dispatcher stamps it.
#[derive(Debug, Default)]
pub struct ToolOutput {
    pub payload: Payload,
    pub artifact: Option<Artifact>,
    pub consumed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub payload: Payload,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub consumed: Vec<String>,
}

impl ToolResult {
    /// The JSON shown to the reasoning layer.
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("tool result serializes")
    }
}

/// Merges the payloads of results whose artifact no later result consumed.
/// These are the outputs a procedure actually reports.
pub fn merge_unconsumed(results: &[ToolResult]) -> Payload {
    let mut out = Payload::new();
    for (i, r) in results.iter().enumerate() {
        let consumed_later = r.artifact.as_ref().is_some_and(|id| {
            results[i + 1..].iter().any(|later| later.consumed.contains(id))
        });
        if consumed_later {
            continue;
        }
        for (key, row) in &r.payload {
            out.entry(key.clone()).or_default().extend(row.iter().map(|(k, v)| (k.clone(), *v)));
        }
    }
    out
}

/// Intermediate results kept on the device between calls.
#[derive(Debug, Clone)]
pub enum Artifact {
    Series {
        selection: DateSelection,
        series: GlucoseSeries<f64>,
    },
    Features {
        selection: DateSelection,
        records: BTreeMap<String, DailyFeatureRecord>,
    },
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Series { .. } => "filtered series",
            Artifact::Features { .. } => "feature table",
        }
    }
}

/// Per-task artifact store. Never serialized.
#[derive(Debug, Default)]
pub struct Workspace {
    artifacts: Vec<(String, Artifact)>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, artifact: Artifact) -> String {
        let id = format!("artifact_{}", self.artifacts.len() + 1);
        self.artifacts.push((id.clone(), artifact));
        id
    }

    pub fn get(&self, id: &str) -> Result<&Artifact, ToolError> {
        self.artifacts
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, a)| a)
            .ok_or_else(|| ToolError::UnknownArtifact(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }
}

/// All of one subject's local data.
#[derive(Debug, Clone)]
pub struct LocalData {
    pub cgm: Arc<GlucoseSeries<f64>>,
    pub rate_minutes: u32,
    pub modalities: BTreeMap<String, Arc<EventLog>>,
}

impl LocalData {
    pub fn new(cgm: GlucoseSeries<f64>) -> Self {
        let rate_minutes = data::estimate_sampling_rate(&cgm).unwrap_or_else(|e| {
            tracing::warn!(error = %e, "falling back to default sampling rate");
            FALLBACK_RATE_MINUTES
        });
        Self {
            cgm: Arc::new(cgm),
            rate_minutes,
            modalities: BTreeMap::new(),
        }
    }

    pub fn with_modality(mut self, log: EventLog) -> Self {
        self.modalities.insert(log.modality.clone(), Arc::new(log));
        self
    }
}

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    pub thresholds: RangeThresholds<f64>,
    pub raw_cap: usize,
    pub default_trend_bin: u32,
    /// Where `plot_daily_trends` writes charts; no file is written when unset.
    pub plot_dir: Option<PathBuf>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            thresholds: RangeThresholds::default(),
            raw_cap: privacy::DEFAULT_RAW_CAP,
            default_trend_bin: 60,
            plot_dir: None,
        }
    }
}

pub struct ToolContext<'a> {
    pub data: &'a LocalData,
    pub workspace: &'a mut Workspace,
    pub config: &'a SandboxConfig,
}

pub type Executor =
    Arc<dyn Fn(&Args, &mut ToolContext<'_>) -> Result<ToolOutput, ToolError> + Send + Sync>;

struct Registered {
    spec: ToolSpec,
    exec: Executor,
}

/// Immutable-after-startup tool table. Dispatch is reentrant.
#[derive(Default)]
pub struct ToolRegistry {
    tools: Vec<Registered>,
    index: HashMap<String, usize>,
    config: SandboxConfig,
    audit: Option<Arc<AuditLog>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("tools", &self.tools.iter().map(|t| &t.spec.name).collect::<Vec<_>>())
            .finish()
    }
}

impl ToolRegistry {
    pub fn new(config: SandboxConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn with_audit(mut self, audit: Arc<AuditLog>) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn audit(&self) -> Option<&Arc<AuditLog>> {
        self.audit.as_ref()
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn register(&mut self, spec: ToolSpec, exec: Executor) -> Result<(), SandboxError> {
        if self.index.contains_key(&spec.name) {
            return Err(SandboxError::DuplicateTool(spec.name));
        }
        self.index.insert(spec.name.clone(), self.tools.len());
        self.tools.push(Registered { spec, exec });
        Ok(())
    }

    /// Tool specs in registration order.
    pub fn catalog(&self) -> Vec<&ToolSpec> {
        self.tools.iter().map(|t| &t.spec).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.index.get(name).map(|&i| &self.tools[i].spec)
    }

    pub fn dispatch(
        &self,
        call: &ToolCall,
        data: &LocalData,
        workspace: &mut Workspace,
    ) -> Result<ToolResult, SandboxError> {
        let started = Instant::now();
        let result = self.dispatch_inner(call, data, workspace);
        if let Some(audit) = &self.audit {
            audit.record(&call.name, &call.arguments, started.elapsed(), result.is_ok());
        }
        result
    }

    fn dispatch_inner(
        &self,
        call: &ToolCall,
        data: &LocalData,
        workspace: &mut Workspace,
    ) -> Result<ToolResult, SandboxError> {
        let tool = self
            .index
            .get(&call.name)
            .map(|&i| &self.tools[i])
            .ok_or_else(|| SandboxError::UnknownTool(call.name.clone()))?;
        tool.spec
            .validate(&call.arguments)
            .map_err(|reason| SandboxError::SchemaViolation {
                tool: call.name.clone(),
                reason,
            })?;
        let args = Args::new(call.arguments.clone());
        let mut ctx = ToolContext {
            data,
            workspace,
            config: &self.config,
        };
        let out = (tool.exec)(&args, &mut ctx).map_err(|source| match source {
            ToolError::MissingArgument(_) | ToolError::InvalidArgument { .. } => {
                SandboxError::SchemaViolation {
                    tool: call.name.clone(),
                    reason: source.to_string(),
                }
            }
            source => SandboxError::Execution {
                tool: call.name.clone(),
                source,
            },
        })?;
        let json = serde_json::to_value(&out.payload).expect("payload serializes");
        privacy::scan_payload(&json, self.config.raw_cap).map_err(|violation| {
            SandboxError::Privacy {
                tool: call.name.clone(),
                violation,
            }
        })?;
        let artifact = out.artifact.map(|a| workspace.insert(a));
        Ok(ToolResult {
            tool: call.name.clone(),
            payload: out.payload,
            artifact,
            consumed: out.consumed,
        })
    }
}
