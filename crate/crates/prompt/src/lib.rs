// SPDX-License-Identifier: MIT OR Apache-2.0

//! Categorical clustering through a chat-completions HTTP endpoint.
//!
//! [`RemoteBackend`] renders the core prompt template, posts it to
//! `{base_url}/chat/completions`, and parses the reply with the strict
//! validator from `neurocat::cluster`. Transport failures (connection
//! errors, timeouts, 429 and 5xx) are retried with exponential backoff; an
//! unparseable reply is re-requested once. Results from this backend depend
//! on a remote model and are not reproducible.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use neurocat::cluster::{parse_model_output, render_messages, ChatMessage, ClusterBackend, ClusterRequest, ClusterResponse};
use neurocat::{Error, Result};
use serde_json::{json, Value};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o";
/// Environment variable naming the variable that holds the API key.
pub const KEY_ENV_VAR: &str = "NEUROCAT_PROMPT_KEY_ENV";
pub const DEFAULT_KEY_ENV: &str = "NEUROCAT_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. No
    /// Authorization header is sent when it is unset.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubled for each further one.
    pub backoff: Duration,
    pub max_concurrency: usize,
    /// Log request and response bodies without token strings.
    pub redact_tokens: bool,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            model: DEFAULT_MODEL.into(),
            api_key_env: DEFAULT_KEY_ENV.into(),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
            max_concurrency: 4,
            redact_tokens: true,
        }
    }
}

impl EndpointConfig {
    /// Defaults overridden by `NEUROCAT_PROMPT_URL`, `NEUROCAT_PROMPT_MODEL`
    /// and `NEUROCAT_PROMPT_KEY_ENV`.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(url) = std::env::var("NEUROCAT_PROMPT_URL") {
            cfg.base_url = url;
        }
        if let Ok(model) = std::env::var("NEUROCAT_PROMPT_MODEL") {
            cfg.model = model;
        }
        if let Ok(var) = std::env::var(KEY_ENV_VAR) {
            cfg.api_key_env = var;
        }
        cfg
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteBackend {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    permits: Permits,
}

enum Failure {
    Retryable(String),
    Fatal(Error),
}

impl RemoteBackend {
    pub fn new(cfg: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            permits: Permits {
                free: Mutex::new(cfg.max_concurrency.max(1)),
                cv: Condvar::new(),
            },
            agent,
            cfg,
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn request_body(&self, messages: &[ChatMessage]) -> Value {
        json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": messages.iter().map(|m| json!({"role": m.role, "content": m.content})).collect::<Vec<_>>(),
        })
    }

    fn loggable(&self, text: &str, req: &ClusterRequest) -> String {
        if !self.cfg.redact_tokens {
            return text.to_string();
        }
        let mut out = text.to_string();
        for t in &req.tokens {
            let quoted = serde_json::to_string(t).expect("string serializes");
            let escaped = serde_json::to_string(&quoted).expect("string serializes");
            out = out.replace(&escaped[1..escaped.len() - 1], "\\\"<token>\\\"");
            out = out.replace(&quoted, "\"<token>\"");
        }
        out
    }

    fn post_once(&self, body: &Value) -> std::result::Result<String, Failure> {
        let mut request = self.agent.post(&self.cfg.endpoint()).header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = request
            .send_json(body)
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            429 | 500..=599 => Err(Failure::Retryable(format!("HTTP {status}"))),
            _ => Err(Failure::Fatal(Error::BackendTransport(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            )))),
        }
    }

    /// Raw completion text, retrying transport failures.
    fn complete(&self, req: &ClusterRequest, messages: &[ChatMessage]) -> Result<String> {
        let body = self.request_body(messages);
        debug!("request {}", self.loggable(&body.to_string(), req));
        let attempts = self.cfg.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.cfg.backoff * 2u32.pow(attempt - 2));
            }
            match self.post_once(&body) {
                Ok(text) => {
                    debug!("response {}", self.loggable(&text, req));
                    let value: Value = serde_json::from_str(&text)
                        .map_err(|e| Error::BackendFormat(format!("response is not JSON: {e}")))?;
                    return value
                        .pointer("/choices/0/message/content")
                        .and_then(Value::as_str)
                        .map(String::from)
                        .ok_or_else(|| Error::BackendFormat("response has no choices[0].message.content".into()));
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    warn!("attempt {attempt}/{attempts} to {} failed: {msg}", self.cfg.endpoint());
                    last = msg;
                }
            }
        }
        Err(Error::BackendTransport(format!("{attempts} attempts failed, last: {last}")))
    }
}

impl ClusterBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("prompt(model={},url={})", self.cfg.model, self.cfg.base_url)
    }

    fn cluster(&self, req: &ClusterRequest) -> Result<ClusterResponse> {
        let _permit = self.permits.acquire();
        let messages = render_messages(req)?;
        let backend = format!("{} template={}", self.id(), req.template_id);
        let mut retried_format = false;
        loop {
            let outcome = self
                .complete(req, &messages)
                .and_then(|text| parse_model_output(req, &text, &backend));
            match outcome {
                Err(Error::BackendFormat(msg)) if !retried_format => {
                    warn!("unparseable model output, asking again: {msg}");
                    retried_format = true;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use neurocat::cluster::DEFAULT_TEMPLATE_ID;

    #[test]
    fn endpoint_join() {
        let mut c = EndpointConfig::default();
        c.base_url = "http://localhost:8080/v1/".into();
        assert_eq!(c.endpoint(), "http://localhost:8080/v1/chat/completions");
    }

    #[test]
    fn redaction_hides_tokens() {
        let b = RemoteBackend::new(EndpointConfig::default());
        let req = ClusterRequest::new(vec![" secret".into(), "zebra".into()], 2, DEFAULT_TEMPLATE_ID).unwrap();
        let body = b.request_body(&render_messages(&req).unwrap()).to_string();
        assert!(body.contains("secret"));
        let logged = b.loggable(&body, &req);
        assert!(!logged.contains("secret") && !logged.contains("zebra"), "{logged}");
        assert!(!b.id().contains("Bearer"));
    }
}
