//! Named run profiles and the JSON run-config format.
//!
//! Settings resolve as flags > config file > profile defaults: each layer is
//! a [`RunConfig`] and [`RunConfig::overlay`] lets the later one win field by
//! field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::plan::{
    plan_bot_series, plan_pd_session, plan_pd_session_with, plan_rps_tournament, ContinuationMode, Ordering,
    Participant, SessionPlan,
};
use super::ContinuationRule;
use crate::agents::{builtin, AgentKind, AgentSpec};
use crate::error::{Error, Result};
use crate::game::{Game, Role};
use crate::gateway::ModelEndpoint;
use crate::matrix::PayoffMatrix;

pub const REPLICATION_ROUNDS: usize = 50;
pub const REPLICATION_REPETITIONS: usize = 3;
pub const REPLICATION_SUBJECTS: usize = 24;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    ReplicationRps,
    ReplicationBots,
    ReplicationPd,
}

impl Profile {
    pub const ALL: [Profile; 3] = [
        Profile::ReplicationRps,
        Profile::ReplicationBots,
        Profile::ReplicationPd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::ReplicationRps => "replication-rps",
            Profile::ReplicationBots => "replication-bots",
            Profile::ReplicationPd => "replication-pd",
        }
    }

    pub fn defaults(self) -> RunConfig {
        let mut c = RunConfig {
            profile: Some(self),
            seed: Some(DEFAULT_SEED),
            ..Default::default()
        };
        match self {
            Profile::ReplicationRps => {
                c.matrix = Some("rps_modified".into());
                c.rounds = Some(REPLICATION_ROUNDS);
                c.repetitions = Some(REPLICATION_REPETITIONS);
                c.self_pairs = Some(true);
            }
            Profile::ReplicationBots => {
                c.matrix = Some("rps_modified".into());
                c.rounds = Some(REPLICATION_ROUNDS);
                c.repetitions = Some(REPLICATION_REPETITIONS);
                c.bots = Some(vec![AgentRef::Name("wslu".into()), AgentRef::Name("wdls".into())]);
            }
            Profile::ReplicationPd => {
                c.matrix = Some("pd_table".into());
                c.subjects = Some(REPLICATION_SUBJECTS);
                c.mode = Some(ContinuationMode::Dice);
                c.ordering = Some(Ordering::Normal);
            }
        }
        c
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown profile `{s}` (replication-rps, replication-bots, replication-pd)"
            ))
        })
    }
}

/// An agent given by name (built-in, `human`, or a key of `endpoints`) or
/// by a full inline spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentRef {
    Name(String),
    Spec(AgentSpec),
}

impl AgentRef {
    pub fn resolve(&self, endpoints: &BTreeMap<String, ModelEndpoint>) -> Result<AgentSpec> {
        match self {
            AgentRef::Spec(s) => Ok(s.clone()),
            AgentRef::Name(n) => {
                if let Some(ep) = endpoints.get(n) {
                    Ok(AgentSpec::new(n.clone(), AgentKind::Llm { endpoint: ep.clone() }))
                } else if n == "human" {
                    Ok(AgentSpec::new("human", AgentKind::Human))
                } else {
                    builtin(n).ok_or_else(|| {
                        Error::Config(format!("agent `{n}` is neither built in nor a configured endpoint"))
                    })
                }
            }
        }
    }
}

/// Declarative run settings. Every field is optional so configs can be
/// layered.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Option<Profile>,
    pub session_id: Option<String>,
    pub seed: Option<u64>,
    /// Bundled matrix name or path to a matrix file.
    pub matrix: Option<String>,
    pub agents: Option<Vec<AgentRef>>,
    pub bots: Option<Vec<AgentRef>>,
    #[serde(default)]
    pub endpoints: BTreeMap<String, ModelEndpoint>,
    pub rounds: Option<usize>,
    pub repetitions: Option<usize>,
    pub self_pairs: Option<bool>,
    pub subjects: Option<usize>,
    pub mode: Option<ContinuationMode>,
    pub ordering: Option<Ordering>,
    /// Explicit treatment labels (`delta=0.5`, `H=2`); overrides mode/ordering.
    pub treatments: Option<Vec<String>>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub timestamps: Option<bool>,
}

macro_rules! take {
    ($base:ident, $over:ident, $($f:ident),*) => {
        $( if $over.$f.is_some() { $base.$f = $over.$f; } )*
    };
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    /// `over` wins wherever it sets a field; endpoint maps are merged.
    pub fn overlay(mut self, over: RunConfig) -> RunConfig {
        take!(
            self,
            over,
            profile,
            session_id,
            seed,
            matrix,
            agents,
            bots,
            rounds,
            repetitions,
            self_pairs,
            subjects,
            mode,
            ordering,
            treatments,
            out_dir,
            jobs,
            timestamps
        );
        self.endpoints.extend(over.endpoints);
        self
    }

    /// Layers `config` and then `flags` on top of the defaults of whichever
    /// profile the upper layers name, or `fallback`.
    pub fn resolve(fallback: Profile, config: Option<RunConfig>, flags: RunConfig) -> RunConfig {
        let profile = flags
            .profile
            .or_else(|| config.as_ref().and_then(|c| c.profile))
            .unwrap_or(fallback);
        let mut c = profile.defaults();
        if let Some(file) = config {
            c = c.overlay(file);
        }
        c.overlay(flags)
    }

    pub fn matrix(&self, game: Game) -> Result<PayoffMatrix> {
        let m = match self.matrix.as_deref() {
            None => match game {
                Game::Rps => PayoffMatrix::rps_modified(),
                Game::Pd => PayoffMatrix::pd_table(),
            },
            Some(name) => load_matrix(name)?,
        };
        if m.game != Some(game) {
            return Err(Error::Config(format!("matrix `{}` is not a {game} matrix", m.name)));
        }
        Ok(m)
    }

    fn agent_list(&self, refs: &Option<Vec<AgentRef>>, what: &str) -> Result<Vec<AgentSpec>> {
        let refs = refs
            .as_ref()
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::Config(format!("no {what} given")))?;
        refs.iter().map(|r| r.resolve(&self.endpoints)).collect()
    }

    fn finish(&self, plan: SessionPlan, game: Game) -> Result<SessionPlan> {
        let mut plan = plan
            .with_matrix(self.matrix(game)?)
            .with_seed(self.seed.unwrap_or(DEFAULT_SEED));
        if let Some(id) = &self.session_id {
            plan = plan.with_session_id(id.clone());
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn rps_plan(&self) -> Result<SessionPlan> {
        let agents = self.agent_list(&self.agents, "agents")?;
        let plan = plan_rps_tournament(
            &agents,
            self.repetitions.unwrap_or(REPLICATION_REPETITIONS),
            self.rounds.unwrap_or(REPLICATION_ROUNDS),
            self.self_pairs.unwrap_or(true),
        )?;
        self.finish(plan, Game::Rps)
    }

    pub fn bots_plan(&self) -> Result<SessionPlan> {
        let agents = self.agent_list(&self.agents, "agent")?;
        if agents.len() != 1 {
            return Err(Error::Config(format!(
                "a bot series takes exactly one agent, got {}",
                agents.len()
            )));
        }
        let bots = self.agent_list(&self.bots, "bots")?;
        let plan = plan_bot_series(
            &agents[0],
            &bots,
            self.repetitions.unwrap_or(REPLICATION_REPETITIONS),
            self.rounds.unwrap_or(REPLICATION_ROUNDS),
        )?;
        self.finish(plan, Game::Rps)
    }

    pub fn pd_plan(&self) -> Result<SessionPlan> {
        let agents = self.agent_list(&self.agents, "agents")?;
        let n = self.subjects.unwrap_or(REPLICATION_SUBJECTS);
        let participants = pd_participants(n, &agents)?;
        let plan = match &self.treatments {
            Some(labels) => {
                let rules = labels
                    .iter()
                    .map(|l| ContinuationRule::parse_label(l).map_err(|e| Error::Config(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                plan_pd_session_with(&participants, rules)?
            }
            None => plan_pd_session(
                &participants,
                self.ordering.unwrap_or(Ordering::Normal),
                self.mode.unwrap_or(ContinuationMode::Dice),
            )?,
        };
        self.finish(plan, Game::Pd)
    }
}

/// Bundled matrix by name, else a matrix file.
pub fn load_matrix(name: &str) -> Result<PayoffMatrix> {
    if let Some(m) = PayoffMatrix::bundled(name) {
        return Ok(m);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(Error::Config(format!(
            "`{name}` is neither a bundled matrix ({}) nor a file",
            PayoffMatrix::bundled_names().join(", ")
        )));
    }
    PayoffMatrix::parse(&std::fs::read_to_string(path)?)
}

/// `n` PD subjects `red01..` and `blue01..`. One agent plays every seat;
/// two agents split Red and Blue; `n` agents fill Red first, then Blue.
pub fn pd_participants(n: usize, agents: &[AgentSpec]) -> Result<Vec<Participant>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "PD sessions need an even number of subjects, got {n}"
        )));
    }
    let g = n / 2;
    let pick = |i: usize| -> Result<&AgentSpec> {
        match agents.len() {
            1 => Ok(&agents[0]),
            2 => Ok(&agents[i / g]),
            k if k == n => Ok(&agents[i]),
            k => Err(Error::Config(format!("PD sessions take 1, 2 or {n} agents, got {k}"))),
        }
    };
    (0..n)
        .map(|i| {
            let (role, k) = if i < g {
                (Role::Red, i + 1)
            } else {
                (Role::Blue, i - g + 1)
            };
            let id = format!("{}{k:02}", role.name().to_lowercase());
            Ok(Participant::new(id, Some(role), pick(i)?.clone()))
        })
        .collect()
}
