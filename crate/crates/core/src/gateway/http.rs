//! OpenAI-compatible `/chat/completions` client.
//!
//! Wire body: `{"model": ..., "temperature": ..., "messages": [{"role", "content"}]}`
//! with an optional `Authorization: Bearer <token>` header, the token being
//! read from the environment variable named by the endpoint.

use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value;

use super::{ChatBackend, ChatMessage, ChatReply, ChatRequest, ModelEndpoint, TransportError};
use crate::error::{Error, Result};

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    auth_token_env: Option<String>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

impl HttpBackend {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| Error::Gateway(format!("cannot build HTTP client: {e}")))?;
        let base = endpoint.base_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Ok(HttpBackend {
            client,
            url,
            auth_token_env: endpoint.auth_token_env.clone(),
        })
    }

    pub fn wire_body(request: &ChatRequest) -> Value {
        serde_json::to_value(WireRequest {
            model: &request.model,
            temperature: request.temperature,
            messages: &request.messages,
        })
        .expect("request serializes")
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError> {
        let started = Instant::now();
        let mut req = self.client.post(&self.url).json(&Self::wire_body(request));
        if let Some(var) = &self.auth_token_env {
            let token = std::env::var(var)
                .map_err(|_| TransportError::fatal(format!("environment variable {var} is not set")))?;
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::retryable(format!("request failed: {}", e.without_url())))?;
        let status = resp.status();
        let body: Value = resp
            .json()
            .map_err(|e| TransportError::retryable(format!("unreadable response ({status}): {e}")))?;
        if !status.is_success() {
            let msg = body
                .pointer("/error/message")
                .and_then(Value::as_str)
                .unwrap_or("no error message");
            let err = format!("HTTP {status}: {msg}");
            // context-length and auth failures will not fix themselves
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                TransportError::retryable(err)
            } else {
                TransportError::fatal(err)
            });
        }
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| TransportError::retryable("response has no choices[0].message.content"))?
            .to_string();
        let tokens = body.pointer("/usage/total_tokens").and_then(Value::as_u64).unwrap_or(0);
        Ok(ChatReply {
            text,
            tokens,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
