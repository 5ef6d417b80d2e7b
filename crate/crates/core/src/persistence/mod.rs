//! Run manifests, the JSONL event log, and CSV export.
//!
//! Log layout: one [`LogEnvelope`] per line. `seq` starts at 1 and is
//! contiguous per (session, match). Event types:
//!
//! | `event.type`             | payload                                         |
//! |--------------------------|-------------------------------------------------|
//! | `match_start`            | [`MatchStart`]                                  |
//! | `round`                  | [`RoundRecord`]                                 |
//! | `message`                | [`MessageEvent`]: one chat message of a slot    |
//! | `match_end`              | [`MatchEnd`]                                    |
//! | `reference_cooperation`  | [`ReferenceCooperation`] (pre-aggregated data)  |
//! | `reference_differential` | [`ReferenceDifferential`] (pre-aggregated data) |

mod csv_export;
mod log;
mod manifest;

use serde::{Deserialize, Serialize};

use crate::gateway::ChatRole;
use crate::protocol::{MatchEnd, MatchStart, RoundRecord};

pub use csv_export::{export_csv, write_csv, CsvReport};
pub use log::{
    append_record, canonical_line, load_log, read_envelopes, validate_envelope, Ack, JsonlSink, Log, LogFilter,
};
pub use manifest::{RunManifest, MANIFEST_VERSION};

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEnvelope {
    pub v: u32,
    pub session_id: String,
    pub match_id: String,
    pub seq: u64,
    pub event: LogEvent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEvent {
    MatchStart(MatchStart),
    Round(RoundRecord),
    Message(MessageEvent),
    MatchEnd(MatchEnd),
    ReferenceCooperation(ReferenceCooperation),
    ReferenceDifferential(ReferenceDifferential),
}

impl LogEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            LogEvent::MatchStart(_) => "match_start",
            LogEvent::Round(_) => "round",
            LogEvent::Message(_) => "message",
            LogEvent::MatchEnd(_) => "match_end",
            LogEvent::ReferenceCooperation(_) => "reference_cooperation",
            LogEvent::ReferenceDifferential(_) => "reference_differential",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageEvent {
    pub conversation: String,
    pub slot: usize,
    pub role: ChatRole,
    pub text: String,
}

/// Published cooperation percentage of a population in one treatment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCooperation {
    pub population: String,
    pub treatment: String,
    pub percent: f64,
    pub source: String,
}

/// Published average (agent - bot) differentials against one bot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDifferential {
    pub population: String,
    pub opponent: String,
    pub win_differential: f64,
    pub payoff_differential: f64,
    pub source: String,
}
