//! Generic chat-style VLM client over HTTP(S).

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{Part, VlmBackend, VlmError, VlmRequest};

pub const ENDPOINT_VAR: &str = "GLYPHFORGE_VLM_ENDPOINT";
pub const KEY_VAR: &str = "GLYPHFORGE_VLM_KEY";
pub const MODEL_VAR: &str = "GLYPHFORGE_VLM_MODEL";

/// Counting gate bounding concurrent calls.
#[derive(Debug)]
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.slots.lock().expect("gate lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("gate lock") += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    endpoint: String,
    key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
    gate: Arc<Gate>,
}

impl RemoteBackend {
    pub fn new(
        endpoint: impl Into<String>,
        key: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
        max_in_flight: usize,
    ) -> Result<Self, VlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| VlmError::Unavailable(e.to_string()))?;
        Ok(RemoteBackend {
            endpoint: endpoint.into(),
            key,
            model: model.into(),
            client,
            gate: Arc::new(Gate {
                slots: Mutex::new(max_in_flight.max(1)),
                freed: Condvar::new(),
            }),
        })
    }

    /// Endpoint from `GLYPHFORGE_VLM_ENDPOINT`, bearer key from
    /// `GLYPHFORGE_VLM_KEY`, optional model name from `GLYPHFORGE_VLM_MODEL`.
    pub fn from_env(timeout: Duration, max_in_flight: usize) -> Result<Self, VlmError> {
        let endpoint = std::env::var(ENDPOINT_VAR).map_err(|_| VlmError::Unavailable(format!("{ENDPOINT_VAR} is not set")))?;
        let key = std::env::var(KEY_VAR).ok();
        let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| "default".into());
        Self::new(endpoint, key, model, timeout, max_in_flight)
    }

    pub fn request_body(&self, request: &VlmRequest) -> Value {
        let b64 = base64::engine::general_purpose::STANDARD;
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let content: Vec<Value> = m
                    .content
                    .iter()
                    .map(|p| match p {
                        Part::Text(t) => json!({"type": "text", "data": t}),
                        Part::Image(bytes) => json!({"type": "image", "data": b64.encode(bytes)}),
                    })
                    .collect();
                json!({"role": m.role, "content": content})
            })
            .collect();
        json!({"model": self.model, "messages": messages})
    }
}

impl VlmBackend for RemoteBackend {
    fn identity(&self) -> String {
        format!("remote:{}@{}", self.model, self.endpoint)
    }

    fn call(&self, request: &VlmRequest) -> Result<String, VlmError> {
        let err = |message: String| VlmError::Backend {
            backend: self.identity(),
            message,
        };
        let _permit = self.gate.acquire();
        let mut req = self.client.post(&self.endpoint).json(&self.request_body(request));
        if let Some(k) = &self.key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| err(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(err(format!("HTTP {status}")));
        }
        let v: Value = resp.json().map_err(|e| err(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| err("response has no choices[0].message.content".into()))
    }
}
