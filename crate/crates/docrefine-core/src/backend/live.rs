//! Live HTTP backend for a chat-completion style endpoint.
//!
//! Speaks the common `/chat/completions` + `/embeddings` JSON convention so
//! any compatible provider works; the base URL comes from
//! [`BackendConfig::endpoint`] and the API key from the environment variable
//! it names. Transport failures retry with exponential backoff up to
//! `max_retries`; `concurrency_limit` is enforced by an internal admission
//! gate so callers may fan out freely.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    finalize_response, Backend, BackendConfig, BackendError, BackendRequest, BackendResponse,
    EmbeddingVector, UserPart,
};

/// Counting semaphore over `Mutex` + `Condvar`; std has no blocking one.
struct AdmissionGate {
    permits: Mutex<usize>,
    available: Condvar,
}

impl AdmissionGate {
    fn new(limit: usize) -> Self {
        Self {
            permits: Mutex::new(limit),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> AdmissionPermit<'_> {
        let mut permits = self.permits.lock().expect("admission lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("admission wait");
        }
        *permits -= 1;
        AdmissionPermit { gate: self }
    }
}

struct AdmissionPermit<'a> {
    gate: &'a AdmissionGate,
}

impl Drop for AdmissionPermit<'_> {
    fn drop(&mut self) {
        *self.gate.permits.lock().expect("admission lock") += 1;
        self.gate.available.notify_one();
    }
}

/// Outcome classification for one transport attempt.
enum Attempt {
    Ok(String),
    /// Transient (network error or 5xx/429): eligible for retry.
    Retry(String),
    /// Permanent (4xx other than 429, bad payload): fail immediately.
    Fatal(String),
}

/// Runs `attempt` with exponential backoff. `max_retries` is the number of
/// re-attempts after the first try; delays double from 500 ms, capped at 8 s.
fn with_retries<F: FnMut() -> Attempt>(max_retries: u32, mut attempt: F) -> Result<String, BackendError> {
    let mut last = String::new();
    for try_index in 0..=max_retries {
        if try_index > 0 {
            let delay = Duration::from_millis(500)
                .saturating_mul(1 << (try_index - 1).min(4))
                .min(Duration::from_secs(8));
            std::thread::sleep(delay);
        }
        match attempt() {
            Attempt::Ok(text) => return Ok(text),
            Attempt::Fatal(msg) => {
                return Err(BackendError::Transport {
                    message: msg,
                    attempts: try_index + 1,
                })
            }
            Attempt::Retry(msg) => last = msg,
        }
    }
    Err(BackendError::Transport {
        message: last,
        attempts: max_retries + 1,
    })
}

/// HTTP client over the configured endpoint.
pub struct LiveBackend {
    cfg: BackendConfig,
    api_key: String,
    http: reqwest::blocking::Client,
    gate: AdmissionGate,
}

impl LiveBackend {
    /// Builds the client; reads the API key from the configured env var.
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            BackendError::InvalidRequest(format!(
                "API key environment variable {} is not set",
                cfg.api_key_env
            ))
        })?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport {
                message: e.to_string(),
                attempts: 0,
            })?;
        let gate = AdmissionGate::new(cfg.concurrency_limit);
        Ok(Self {
            cfg,
            api_key,
            http,
            gate,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    fn post(&self, url: &str, body: &Value) -> Attempt {
        let sent = self
            .http
            .post(url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send();
        match sent {
            Err(e) => Attempt::Retry(format!("request error: {e}")),
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().unwrap_or_default();
                if status.is_success() {
                    Attempt::Ok(text)
                } else if status.is_server_error() || status.as_u16() == 429 {
                    Attempt::Retry(format!("HTTP {status}: {text}"))
                } else {
                    Attempt::Fatal(format!("HTTP {status}: {text}"))
                }
            }
        }
    }
}

fn chat_body(req: &BackendRequest) -> Value {
    let content: Vec<Value> = req
        .user_parts
        .iter()
        .map(|part| match part {
            UserPart::Text(t) => json!({"type": "text", "text": t}),
            UserPart::ImageRef(r) => json!({"type": "image_url", "image_url": {"url": r}}),
        })
        .collect();
    json!({
        "messages": [
            {"role": "system", "content": req.system_text},
            {"role": "user", "content": content},
        ],
        "temperature": req.temperature,
        "response_format": {"type": "json_object"},
    })
}

fn extract_chat_text(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some providers return content as a list of typed parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err("response carries no message content".to_string()),
    }
}

impl Backend for LiveBackend {
    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        req.validate()?;
        let _permit = self.gate.acquire();
        let body = chat_body(req);
        let url = self.url("chat/completions");
        let raw = with_retries(self.cfg.max_retries, || match self.post(&url, &body) {
            Attempt::Ok(text) => match extract_chat_text(&text) {
                Ok(content) => Attempt::Ok(content),
                Err(e) => Attempt::Fatal(e),
            },
            other => other,
        })?;
        finalize_response(req.schema, &raw)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::InvalidRequest("embed of empty list".into()));
        }
        let _permit = self.gate.acquire();
        let url = self.url("embeddings");
        let body = json!({"input": texts});
        let raw = with_retries(self.cfg.max_retries, || self.post(&url, &body))?;
        let v: Value = serde_json::from_str(&raw).map_err(|e| BackendError::Transport {
            message: format!("embedding response is not JSON: {e}"),
            attempts: 1,
        })?;
        let data = v["data"].as_array().ok_or_else(|| BackendError::Transport {
            message: "embedding response carries no data array".to_string(),
            attempts: 1,
        })?;
        if data.len() != texts.len() {
            return Err(BackendError::Transport {
                message: format!("expected {} embeddings, got {}", texts.len(), data.len()),
                attempts: 1,
            });
        }
        data.iter()
            .map(|item| {
                let values: Vec<f64> = item["embedding"]
                    .as_array()
                    .map(|a| a.iter().filter_map(Value::as_f64).collect())
                    .unwrap_or_default();
                EmbeddingVector::unit(values).ok_or_else(|| BackendError::Transport {
                    message: "provider returned a zero embedding".to_string(),
                    attempts: 1,
                })
            })
            .collect()
    }
}
