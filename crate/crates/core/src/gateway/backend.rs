use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatReply, ChatRequest, ChatRole, TransportError};
use crate::error::{Error, Result};

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError>;
}

/// Offline stand-in for a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockMode {
    /// Picks uniformly among the options offered by the last format line.
    /// The pick is a pure function of (seed, conversation, message history).
    Uniform { seed: u64 },
    /// Answers with `replies[k % len]`, where k counts earlier assistant turns.
    Scripted { replies: Vec<String> },
    /// Never produces a parsable reply.
    Unparsable,
}

pub struct MockBackend {
    mode: MockMode,
}

impl MockBackend {
    pub fn new(mode: MockMode) -> Self {
        MockBackend { mode }
    }
}

/// Options listed on the last `Choice:` format line of the latest user message.
fn offered_options(request: &ChatRequest) -> Vec<String> {
    let Some(last_user) = request.messages.iter().rev().find(|m| m.role == ChatRole::User) else {
        return Vec::new();
    };
    last_user
        .text
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("Choice:"))
        .map(|rest| {
            rest.trim()
                .trim_matches(|c| c == '[' || c == ']')
                .split('/')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

fn assistant_turns(request: &ChatRequest) -> usize {
    request
        .messages
        .iter()
        .filter(|m| m.role == ChatRole::Assistant)
        .count()
}

impl ChatBackend for MockBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError> {
        let text = match &self.mode {
            MockMode::Uniform { seed } => {
                let options = offered_options(request);
                if options.is_empty() {
                    return Err(TransportError::fatal("mock: request offers no choices"));
                }
                let mut h = Sha256::new();
                h.update(seed.to_le_bytes());
                h.update(request.conversation.as_bytes());
                for m in &request.messages {
                    h.update([m.role as u8]);
                    h.update((m.text.len() as u64).to_le_bytes());
                    h.update(m.text.as_bytes());
                }
                let digest = h.finalize();
                let x = u64::from_le_bytes(digest[..8].try_into().unwrap());
                // top 53 bits -> uniform in [0, 1)
                let u = (x >> 11) as f64 / (1u64 << 53) as f64;
                let pick = &options[((u * options.len() as f64) as usize).min(options.len() - 1)];
                format!("Reason: I pick uniformly at random.\nChoice: {pick}")
            }
            MockMode::Scripted { replies } => {
                if replies.is_empty() {
                    return Err(TransportError::fatal("mock: empty script"));
                }
                replies[assistant_turns(request) % replies.len()].clone()
            }
            MockMode::Unparsable => "I would rather not say.".to_string(),
        };
        Ok(ChatReply {
            text,
            tokens: 0,
            latency_ms: 0,
        })
    }
}

/// One message of a logged conversation, as stored in `transcripts.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub conversation: String,
    pub seq: u64,
    pub role: ChatRole,
    pub text: String,
}

/// Serves the assistant turns of recorded conversations. The k-th request in
/// a conversation (counted by prior assistant turns) gets the k-th logged reply.
pub struct ReplayBackend {
    replies: BTreeMap<String, Vec<String>>,
}

impl ReplayBackend {
    pub fn from_lines(lines: impl IntoIterator<Item = TranscriptLine>) -> Self {
        let mut grouped: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
        for line in lines.into_iter().filter(|l| l.role == ChatRole::Assistant) {
            grouped
                .entry(line.conversation)
                .or_default()
                .push((line.seq, line.text));
        }
        let replies = grouped
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|(seq, _)| *seq);
                (k, v.into_iter().map(|(_, t)| t).collect())
            })
            .collect();
        ReplayBackend { replies }
    }

    /// Loads a transcript file: either plain [`TranscriptLine`]s or a run log,
    /// whose `message` events are used and all other events skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let mut lines = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| Error::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            let parsed = match value.get("event") {
                Some(event) => {
                    if event.get("type").and_then(|t| t.as_str()) != Some("message") {
                        continue;
                    }
                    let field = |k: &str| event.get(k).cloned().unwrap_or_default();
                    TranscriptLine {
                        conversation: serde_json::from_value(field("conversation"))
                            .map_err(|e| corrupt(e.to_string()))?,
                        seq: value.get("seq").and_then(|s| s.as_u64()).unwrap_or(0),
                        role: serde_json::from_value(field("role")).map_err(|e| corrupt(e.to_string()))?,
                        text: serde_json::from_value(field("text")).map_err(|e| corrupt(e.to_string()))?,
                    }
                }
                None => serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?,
            };
            lines.push(parsed);
        }
        Ok(Self::from_lines(lines))
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError> {
        let turn = assistant_turns(request);
        self.replies
            .get(&request.conversation)
            .and_then(|r| r.get(turn))
            .map(|text| ChatReply {
                text: text.clone(),
                tokens: 0,
                latency_ms: 0,
            })
            .ok_or_else(|| {
                TransportError::fatal(format!(
                    "replay has no reply #{turn} for conversation {}",
                    request.conversation
                ))
            })
    }
}
