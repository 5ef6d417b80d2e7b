//! Chat-completion gateway: endpoint descriptors, transcripts, the
//! parse-and-retry loop, and the pluggable backends (HTTP, mock, replay).

mod backend;
mod http;
pub mod parse;
pub mod prompt;

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use backend::{ChatBackend, MockBackend, MockMode, ReplayBackend, TranscriptLine};
pub use http::HttpBackend;
pub use parse::{parse_choice, ParseFailure};

use crate::error::{DomainError, Error, Result};
use crate::game::{Action, Game, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock { mode: MockMode },
    Replay { path: String },
}

fn default_temperature() -> f64 {
    1.0
}
fn default_retries() -> usize {
    3
}
fn default_timeout() -> u64 {
    120
}
fn default_backoff() -> u64 {
    500
}

/// Where and how to reach a chat model. `auth_token_env` names an
/// environment variable; the token itself is read at request time and never
/// stored, logged, or serialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    #[serde(default)]
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
}

fn default_backend() -> BackendKind {
    BackendKind::Http
}

impl ModelEndpoint {
    pub fn mock(model: impl Into<String>, mode: MockMode) -> Self {
        ModelEndpoint {
            base_url: String::new(),
            model: model.into(),
            temperature: 1.0,
            auth_token_env: None,
            max_retries: 3,
            timeout_secs: 120,
            backoff_ms: 0,
            backend: BackendKind::Mock { mode },
        }
    }

    pub fn http(base_url: impl Into<String>, model: impl Into<String>, auth_token_env: Option<String>) -> Self {
        ModelEndpoint {
            base_url: base_url.into(),
            model: model.into(),
            temperature: 1.0,
            auth_token_env,
            max_retries: 3,
            timeout_secs: 120,
            backoff_ms: 500,
            backend: BackendKind::Http,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.model.trim().is_empty() {
            return Err(DomainError::new("endpoint model name is empty"));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(DomainError::new(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if let Some(var) = &self.auth_token_env {
            let looks_like_name = !var.is_empty()
                && var
                    .chars()
                    .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_');
            if !looks_like_name {
                return Err(DomainError::new(
                    "auth_token_env must name an environment variable (A-Z, 0-9, _), not hold a token",
                ));
            }
        }
        if matches!(self.backend, BackendKind::Http) && self.base_url.trim().is_empty() {
            return Err(DomainError::new("http endpoint needs a base_url"));
        }
        Ok(())
    }

    fn cache_key(&self) -> String {
        serde_json::to_string(&(&self.base_url, &self.model, &self.backend)).unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    #[serde(rename = "content")]
    pub text: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            text: text.into(),
        }
    }
    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            text: text.into(),
        }
    }
    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::Assistant,
            text: text.into(),
        }
    }
}

/// One request as handed to a backend. `conversation` identifies the match
/// slot for replay lookup and is not part of the wire body.
#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest {
    pub conversation: String,
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub tokens: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        TransportError {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        TransportError {
            message: message.into(),
            retryable: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub conversation: String,
    pub messages: Vec<ChatMessage>,
    pub parsed_choices: Vec<Action>,
    pub tokens_used: u64,
    pub latencies_ms: Vec<u64>,
}

impl ChatTranscript {
    pub fn new(conversation: impl Into<String>) -> Self {
        ChatTranscript {
            conversation: conversation.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, message: ChatMessage) {
        self.messages.push(message);
    }
}

/// Counting semaphore capping in-flight requests across all matches.
struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.slots.lock().unwrap();
        while *free == 0 {
            free = self.freed.wait(free).unwrap();
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Shared entry point for all model traffic.
pub struct Gateway {
    limiter: Limiter,
    backends: Mutex<HashMap<String, Arc<dyn ChatBackend>>>,
}

impl Default for Gateway {
    fn default() -> Self {
        Gateway::new(4)
    }
}

impl Gateway {
    pub fn new(max_concurrent: usize) -> Self {
        Gateway {
            limiter: Limiter {
                slots: Mutex::new(max_concurrent.max(1)),
                freed: Condvar::new(),
            },
            backends: Mutex::new(HashMap::new()),
        }
    }

    /// Installs a backend for an endpoint, replacing the one built from its
    /// descriptor. Mostly useful in tests.
    pub fn register(&self, endpoint: &ModelEndpoint, backend: Arc<dyn ChatBackend>) {
        self.backends.lock().unwrap().insert(endpoint.cache_key(), backend);
    }

    fn backend(&self, endpoint: &ModelEndpoint) -> Result<Arc<dyn ChatBackend>> {
        let key = endpoint.cache_key();
        let mut map = self.backends.lock().unwrap();
        if let Some(b) = map.get(&key) {
            return Ok(b.clone());
        }
        let backend: Arc<dyn ChatBackend> = match &endpoint.backend {
            BackendKind::Http => Arc::new(HttpBackend::new(endpoint)?),
            BackendKind::Mock { mode } => Arc::new(MockBackend::new(mode.clone())),
            BackendKind::Replay { path } => Arc::new(ReplayBackend::load(path)?),
        };
        map.insert(key, backend.clone());
        Ok(backend)
    }

    fn send_with_backoff(
        &self,
        endpoint: &ModelEndpoint,
        backend: &dyn ChatBackend,
        request: &ChatRequest,
    ) -> Result<ChatReply> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                backend.send(request)
            };
            match result {
                Ok(reply) => return Ok(reply),
                Err(e) if e.retryable && attempt < endpoint.max_retries => {
                    let wait = endpoint.backoff_ms.saturating_mul(1 << attempt.min(16));
                    tracing::warn!(conversation = %request.conversation, attempt, error = %e, "transport failure, backing off {wait} ms");
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => {
                    return Err(Error::Gateway(format!(
                        "{} failed after {} attempts: {e}",
                        endpoint.model,
                        attempt + 1
                    )))
                }
            }
        }
    }

    /// Sends the whole transcript plus `decision_prompt`, re-asking with a
    /// format reminder up to `max_retries` times when the reply has no
    /// parsable choice. Everything exchanged is appended to `transcript`.
    pub fn complete(
        &self,
        endpoint: &ModelEndpoint,
        transcript: &mut ChatTranscript,
        decision_prompt: &str,
        game: Game,
        role: Role,
    ) -> Result<(String, Action)> {
        let backend = self.backend(endpoint)?;
        let role_filter = (game == Game::Pd).then_some(role);
        transcript.push(ChatMessage::user(decision_prompt));
        let mut attempts = 0;
        loop {
            let request = ChatRequest {
                conversation: transcript.conversation.clone(),
                model: endpoint.model.clone(),
                temperature: endpoint.temperature,
                messages: transcript.messages.clone(),
            };
            let reply = self.send_with_backoff(endpoint, backend.as_ref(), &request)?;
            attempts += 1;
            transcript.tokens_used += reply.tokens;
            transcript.latencies_ms.push(reply.latency_ms);
            transcript.push(ChatMessage::assistant(reply.text.clone()));
            match parse_choice(&reply.text, game, role_filter) {
                Ok(action) => {
                    transcript.parsed_choices.push(action);
                    return Ok((reply.text, action));
                }
                Err(_) if attempts <= endpoint.max_retries => {
                    tracing::debug!(conversation = %transcript.conversation, attempts, "unparsable reply, re-asking");
                    transcript.push(ChatMessage::user(prompt::format_reminder(game, role)));
                }
                Err(failure) => {
                    return Err(Error::ProtocolViolation {
                        attempts,
                        last_reply: failure.raw,
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_validation() {
        let mut e = ModelEndpoint::http("http://localhost:1", "m", Some("OPENAI_API_KEY".into()));
        e.validate().unwrap();
        e.auth_token_env = Some("sk-live-abc123".into());
        assert!(e.validate().is_err());
        e.auth_token_env = None;
        e.temperature = 3.0;
        assert!(e.validate().is_err());
    }

    #[test]
    fn replay_backend_serves_scripted_choice() {
        let mut lines = Vec::new();
        lines.push(TranscriptLine {
            conversation: "s/m/0".into(),
            seq: 0,
            role: ChatRole::Assistant,
            text: "Choice: Rock".into(),
        });
        let gw = Gateway::new(1);
        let ep = ModelEndpoint::mock("replayed", MockMode::Unparsable);
        gw.register(&ep, Arc::new(ReplayBackend::from_lines(lines)));
        let mut t = ChatTranscript::new("s/m/0");
        t.push(ChatMessage::system("sys"));
        let (_, a) = gw.complete(&ep, &mut t, "Trial 1", Game::Rps, Role::Red).unwrap();
        assert_eq!(a, Action::Rock);
    }

    #[test]
    fn mock_uniform_is_seed_deterministic() {
        let run = |seed: u64| {
            let gw = Gateway::new(2);
            let ep = ModelEndpoint::mock("mock", MockMode::Uniform { seed });
            let mut t = ChatTranscript::new("conv");
            t.push(ChatMessage::system(prompt::rps_system()));
            (1..=20)
                .map(|trial| {
                    gw.complete(&ep, &mut t, &prompt::rps_decision(trial), Game::Rps, Role::Red)
                        .unwrap()
                        .1
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn retry_exhaustion_is_a_protocol_violation() {
        let gw = Gateway::new(1);
        let ep = ModelEndpoint::mock("bad", MockMode::Unparsable);
        let mut t = ChatTranscript::new("conv");
        let err = gw
            .complete(&ep, &mut t, &prompt::rps_decision(1), Game::Rps, Role::Red)
            .unwrap_err();
        match err {
            Error::ProtocolViolation { attempts, .. } => assert_eq!(attempts, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.latencies_ms.len(), 4);
        assert!(t.parsed_choices.is_empty());
    }

    #[test]
    fn recovers_after_reminder() {
        let gw = Gateway::new(1);
        let ep = ModelEndpoint::mock(
            "flaky",
            MockMode::Scripted {
                replies: vec!["hmm, not sure".into(), "Reason: ok\nChoice: Scissors".into()],
            },
        );
        let mut t = ChatTranscript::new("conv");
        let (_, a) = gw
            .complete(&ep, &mut t, &prompt::rps_decision(1), Game::Rps, Role::Red)
            .unwrap();
        assert_eq!(a, Action::Scissors);
        let roles: Vec<ChatRole> = t.messages.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            vec![ChatRole::User, ChatRole::Assistant, ChatRole::User, ChatRole::Assistant]
        );
    }
}
