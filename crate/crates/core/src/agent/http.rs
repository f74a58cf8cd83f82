//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, CompletionRequest, LlmBackend, Role};

pub const ENV_API_BASE: &str = "CGMQA_API_BASE";
pub const ENV_API_KEY: &str = "CGMQA_API_KEY";
pub const ENV_MODEL: &str = "CGMQA_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
    /// Overrides the per-request temperature when set.
    pub temperature: Option<f64>,
}

impl HttpConfig {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            retries: 2,
            backoff: Duration::from_millis(500),
            temperature: None,
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let base = var(ENV_API_BASE).ok_or_else(|| BackendError::Config(format!("{ENV_API_BASE} is not set")))?;
        let model = var(ENV_MODEL).ok_or_else(|| BackendError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = Self::new(base, model);
        cfg.api_key = var(ENV_API_KEY);
        Ok(cfg)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.api_base.trim_end_matches('/'))
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// Chat-completions request body. Tool results go back as user turns so
    /// any compatible server accepts them.
    pub fn request_body(&self, req: &CompletionRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": req.system})];
        for m in &req.messages {
            let (role, content) = match m.role {
                Role::User => ("user", m.content.clone()),
                Role::Assistant => ("assistant", m.content.clone()),
                Role::Tool => ("user", format!("Tool result: {}", m.content)),
            };
            messages.push(json!({"role": role, "content": content}));
        }
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature.unwrap_or(req.temperature),
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, (bool, BackendError)> {
        let mut builder = self.client.post(self.config.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| (true, BackendError::Transport(e.to_string())))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (true, BackendError::Transport(e.to_string())))?;
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((
                retry,
                BackendError::Status {
                    status: status.as_u16(),
                    body: text.chars().take(500).collect(),
                },
            ));
        }
        parse_completion(&text).map_err(|e| (false, e))
    }
}

/// Content of the first choice of a chat-completions response.
pub fn parse_completion(text: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BackendError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
}

impl LlmBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let body = self.request_body(req);
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retry, e)) if retry && attempt < self.config.retries => {
                    tracing::warn!(layer = %req.layer, attempt, error = %e, "backend call failed, retrying");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Layer, Message};

    #[test]
    fn body_and_parsing() {
        let b = HttpBackend::new(HttpConfig::new("http://127.0.0.1:9/v1/", "m")).unwrap();
        assert_eq!(b.config().endpoint(), "http://127.0.0.1:9/v1/chat/completions");
        let req = CompletionRequest {
            layer: Layer::Executor,
            system: "sys".into(),
            messages: vec![Message::user("q"), Message::tool("{}")],
            focus: "q".into(),
            context: Value::Null,
            temperature: 0.6,
        };
        let body = b.request_body(&req);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][2]["content"], "Tool result: {}");
        assert_eq!(body["temperature"], 0.6);
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(parse_completion(ok).unwrap(), "hi");
        assert!(matches!(parse_completion("{}"), Err(BackendError::Malformed(_))));
    }

    #[test]
    fn unreachable_server_is_a_transport_error() {
        let mut cfg = HttpConfig::new("http://127.0.0.1:9", "m");
        cfg.retries = 1;
        cfg.backoff = Duration::from_millis(1);
        cfg.timeout = Duration::from_secs(2);
        let b = HttpBackend::new(cfg).unwrap();
        let req = CompletionRequest {
            layer: Layer::Router,
            system: String::new(),
            messages: vec![],
            focus: String::new(),
            context: Value::Null,
            temperature: 1.0,
        };
        assert!(matches!(b.complete(&req), Err(BackendError::Transport(_))));
    }
}
