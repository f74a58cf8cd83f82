use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// One dispatch. Arguments are kept only as a digest unless full logging is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub tool: String,
    pub args_digest: String,
    pub latency_us: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arguments: Option<Value>,
}

/// SHA-256 of the canonical (key-sorted) JSON arguments.
pub fn args_digest(arguments: &Map<String, Value>) -> String {
    let canonical = serde_json::to_string(arguments).expect("json map serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Default)]
pub struct AuditLog {
    records: Mutex<Vec<AuditRecord>>,
    sink: Option<Mutex<File>>,
    full_arguments: bool,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Also appends each record as a JSON line to `path`.
    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            sink: Some(Mutex::new(file)),
            ..Self::default()
        })
    }

    /// Debug mode: store argument values alongside the digest.
    pub fn full_arguments(mut self, on: bool) -> Self {
        self.full_arguments = on;
        self
    }

    pub fn record(&self, tool: &str, arguments: &Map<String, Value>, latency: Duration, ok: bool) {
        let mut records = self.records.lock().expect("audit lock");
        let rec = AuditRecord {
            seq: records.len() as u64 + 1,
            tool: tool.to_string(),
            args_digest: args_digest(arguments),
            latency_us: latency.as_micros() as u64,
            ok,
            arguments: self.full_arguments.then(|| Value::Object(arguments.clone())),
        };
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&rec).expect("audit record serializes");
            let mut f = sink.lock().expect("audit sink lock");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::warn!(error = %e, "audit log write failed");
            }
        }
        records.push(rec);
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().expect("audit lock").clone()
    }
}
