use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{LogEnvelope, LogEvent, MessageEvent, ReferenceCooperation, ReferenceDifferential, LOG_VERSION};
use crate::error::{Error, Result};
use crate::protocol::{MatchEnd, MatchStart, RoundRecord};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ack {
    pub match_id: String,
    pub seq: u64,
}

/// Append-only JSONL writer. One writer per file.
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
    next_seq: HashMap<(String, String), u64>,
}

impl JsonlSink {
    /// Creates (or truncates) `path`.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path)?;
        Ok(JsonlSink {
            path,
            out: BufWriter::new(file),
            next_seq: HashMap::new(),
        })
    }

    /// Opens `path` for appending, continuing its sequence numbers.
    pub fn open_append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut next_seq = HashMap::new();
        if path.exists() {
            for env in read_envelopes(&path)? {
                next_seq.insert((env.session_id, env.match_id), env.seq + 1);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(JsonlSink {
            path,
            out: BufWriter::new(file),
            next_seq,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends an event, assigning the next sequence number of its match.
    pub fn append(&mut self, session_id: &str, match_id: &str, event: LogEvent) -> Result<Ack> {
        let key = (session_id.to_string(), match_id.to_string());
        let seq = *self.next_seq.get(&key).unwrap_or(&1);
        self.append_envelope(LogEnvelope {
            v: LOG_VERSION,
            session_id: key.0,
            match_id: key.1,
            seq,
            event,
        })
    }

    /// Appends a complete envelope. Its `seq` must be the next one for its
    /// match: lower numbers are duplicates, higher ones leave a gap.
    pub fn append_envelope(&mut self, env: LogEnvelope) -> Result<Ack> {
        validate_envelope(&env)?;
        let key = (env.session_id.clone(), env.match_id.clone());
        let expected = *self.next_seq.get(&key).unwrap_or(&1);
        if env.seq < expected {
            return Err(Error::Schema(format!(
                "duplicate sequence number {} for match `{}`",
                env.seq, env.match_id
            )));
        }
        if env.seq > expected {
            return Err(Error::Schema(format!(
                "sequence gap for match `{}`: got {}, expected {expected}",
                env.match_id, env.seq
            )));
        }
        let line = serde_json::to_string(&env)?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.next_seq.insert(key, env.seq + 1);
        Ok(Ack {
            match_id: env.match_id,
            seq: env.seq,
        })
    }

    /// Appends an untyped record after checking it against the envelope schema.
    pub fn append_json(&mut self, value: &Value) -> Result<Ack> {
        let env: LogEnvelope =
            serde_json::from_value(value.clone()).map_err(|e| Error::Schema(format!("rejected record: {e}")))?;
        self.append_envelope(env)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

impl Drop for JsonlSink {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

pub fn append_record(sink: &mut JsonlSink, envelope: LogEnvelope) -> Result<Ack> {
    sink.append_envelope(envelope)
}

fn schema(msg: String) -> Error {
    Error::Schema(msg)
}

/// Checks the rules serde cannot express.
pub fn validate_envelope(env: &LogEnvelope) -> Result<()> {
    if env.v != LOG_VERSION {
        return Err(schema(format!("log version {} is not supported", env.v)));
    }
    if env.session_id.trim().is_empty() {
        return Err(schema("record has an empty session_id".into()));
    }
    if env.match_id.trim().is_empty() {
        return Err(schema("record has an empty match_id".into()));
    }
    if env.seq == 0 {
        return Err(schema("sequence numbers start at 1".into()));
    }
    if let LogEvent::Round(r) = &env.event {
        if r.match_id != env.match_id || r.session_id != env.session_id {
            return Err(schema(format!(
                "round record of {}/{} filed under {}/{}",
                r.session_id, r.match_id, env.session_id, env.match_id
            )));
        }
        if r.round_index == 0 {
            return Err(schema("round_index is 1-based".into()));
        }
        if r.actions[0].game() != r.actions[1].game() {
            return Err(schema("round actions belong to different games".into()));
        }
        if r.outcomes[1] != r.outcomes[0].complement() {
            return Err(schema(format!(
                "outcomes {:?} and {:?} are inconsistent",
                r.outcomes[0], r.outcomes[1]
            )));
        }
        if !(r.payoffs.0.is_finite() && r.payoffs.1.is_finite()) {
            return Err(schema("payoffs must be finite".into()));
        }
        if r.agent_ids.iter().any(|a| a.trim().is_empty()) {
            return Err(schema("round record has an empty agent id".into()));
        }
    }
    Ok(())
}

/// Reads every envelope, failing on the first unparsable line.
pub fn read_envelopes(path: &Path) -> Result<Vec<LogEnvelope>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| Error::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let env: LogEnvelope = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        validate_envelope(&env).map_err(|e| corrupt(e.to_string()))?;
        out.push(env);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LogFilter {
    pub session: Option<String>,
    pub match_id: Option<String>,
    pub agent: Option<String>,
    pub treatment: Option<String>,
}

impl LogFilter {
    pub fn is_empty(&self) -> bool {
        self == &LogFilter::default()
    }
}

/// What a match looks like to the filter, gathered from its events.
#[derive(Default)]
struct MatchFacts {
    agents: BTreeSet<String>,
    treatments: BTreeSet<String>,
}

fn facts_of(env: &LogEnvelope, facts: &mut MatchFacts) {
    match &env.event {
        LogEvent::MatchStart(s) => {
            facts.agents.extend(s.agent_ids.iter().cloned());
            facts.treatments.extend(s.treatment.iter().cloned());
        }
        LogEvent::Round(r) => {
            facts.agents.extend(r.agent_ids.iter().cloned());
            facts.treatments.extend(r.treatment.iter().cloned());
        }
        LogEvent::MatchEnd(e) => facts.treatments.extend(e.treatment.iter().cloned()),
        LogEvent::ReferenceCooperation(c) => {
            facts.agents.insert(c.population.clone());
            facts.treatments.insert(c.treatment.clone());
        }
        LogEvent::ReferenceDifferential(d) => {
            facts.agents.insert(d.population.clone());
            facts.agents.insert(d.opponent.clone());
        }
        LogEvent::Message(_) => {}
    }
}

/// Loads a log, keeping whole matches that pass every filter. File order
/// is preserved.
pub fn load_log(path: impl AsRef<Path>, filter: &LogFilter) -> Result<Vec<LogEnvelope>> {
    let all = read_envelopes(path.as_ref())?;
    if filter.is_empty() {
        return Ok(all);
    }
    let mut facts: HashMap<(String, String), MatchFacts> = HashMap::new();
    for env in &all {
        facts_of(
            env,
            facts.entry((env.session_id.clone(), env.match_id.clone())).or_default(),
        );
    }
    let keep = |env: &LogEnvelope| {
        let f = &facts[&(env.session_id.clone(), env.match_id.clone())];
        filter.session.as_ref().is_none_or(|s| *s == env.session_id)
            && filter.match_id.as_ref().is_none_or(|m| *m == env.match_id)
            && filter.agent.as_ref().is_none_or(|a| f.agents.contains(a))
            && filter.treatment.as_ref().is_none_or(|t| f.treatments.contains(t))
    };
    Ok(all.into_iter().filter(|e| keep(e)).collect())
}

/// Serialized form of an envelope with timestamps removed, for
/// determinism comparisons.
pub fn canonical_line(env: &LogEnvelope) -> Result<String> {
    let mut v = serde_json::to_value(env)?;
    if let Some(ev) = v.get_mut("event").and_then(Value::as_object_mut) {
        ev.remove("timestamp");
    }
    Ok(serde_json::to_string(&v)?)
}

/// Typed view over a loaded log.
#[derive(Clone, Debug, Default)]
pub struct Log {
    pub starts: BTreeMap<String, MatchStart>,
    pub rounds: Vec<RoundRecord>,
    pub ends: BTreeMap<String, MatchEnd>,
    pub messages: Vec<(u64, MessageEvent)>,
    pub cooperation_refs: Vec<ReferenceCooperation>,
    pub differential_refs: Vec<ReferenceDifferential>,
}

impl Log {
    pub fn from_envelopes(envs: impl IntoIterator<Item = LogEnvelope>) -> Self {
        let mut log = Log::default();
        for env in envs {
            let key = format!("{}/{}", env.session_id, env.match_id);
            match env.event {
                LogEvent::MatchStart(s) => {
                    log.starts.insert(key, s);
                }
                LogEvent::Round(r) => log.rounds.push(r),
                LogEvent::Message(m) => log.messages.push((env.seq, m)),
                LogEvent::MatchEnd(e) => {
                    log.ends.insert(key, e);
                }
                LogEvent::ReferenceCooperation(c) => log.cooperation_refs.push(c),
                LogEvent::ReferenceDifferential(d) => log.differential_refs.push(d),
            }
        }
        log
    }

    pub fn load(path: impl AsRef<Path>, filter: &LogFilter) -> Result<Self> {
        Ok(Self::from_envelopes(load_log(path, filter)?))
    }

    pub fn is_aborted(&self, session_id: &str, match_id: &str) -> bool {
        self.ends
            .get(&format!("{session_id}/{match_id}"))
            .is_some_and(|e| e.aborted)
    }

    /// Rounds of matches that were not aborted.
    pub fn completed_rounds(&self) -> Vec<RoundRecord> {
        self.rounds
            .iter()
            .filter(|r| !self.is_aborted(&r.session_id, &r.match_id))
            .cloned()
            .collect()
    }

    pub fn aborted_matches(&self) -> usize {
        self.ends.values().filter(|e| e.aborted).count()
    }
}
