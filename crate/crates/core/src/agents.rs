//! Agent specifications and the built-in decision rules.
//!
//! Agents never own randomness. Every call to [`policy_step`] receives one
//! uniform draw in `[0, 1)` from a seeded stream owned by the orchestrator,
//! so a whole session can be replayed bit-for-bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::equilibrium::MixedStrategy;
use crate::error::{DomainError, Error, Result};
use crate::game::{Action, Game, Outcome, Transition};
use crate::gateway::ModelEndpoint;

/// Outcome-conditioned distributions over (Stay, Upgrade, Downgrade).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionPolicyTable {
    pub win: [f64; 3],
    pub tie: [f64; 3],
    pub lose: [f64; 3],
}

const THIRD: f64 = 1.0 / 3.0;

impl TransitionPolicyTable {
    pub fn wslu() -> Self {
        TransitionPolicyTable {
            win: [0.8, 0.1, 0.1],
            tie: [THIRD, THIRD, THIRD],
            lose: [0.1, 0.8, 0.1],
        }
    }

    pub fn wdls() -> Self {
        TransitionPolicyTable {
            win: [0.1, 0.1, 0.8],
            tie: [THIRD, THIRD, THIRD],
            lose: [0.8, 0.1, 0.1],
        }
    }

    pub fn wslc() -> Self {
        TransitionPolicyTable {
            win: [1.0, 0.0, 0.0],
            tie: [THIRD, THIRD, THIRD],
            lose: [0.0, 0.5, 0.5],
        }
    }

    pub fn uniform() -> Self {
        TransitionPolicyTable {
            win: [THIRD; 3],
            tie: [THIRD; 3],
            lose: [THIRD; 3],
        }
    }

    pub fn row(&self, outcome: Outcome) -> &[f64; 3] {
        match outcome {
            Outcome::Win => &self.win,
            Outcome::Tie => &self.tie,
            Outcome::Lose => &self.lose,
        }
    }

    pub fn probability(&self, outcome: Outcome, t: Transition) -> f64 {
        self.row(outcome)[t.index()]
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for o in Outcome::ALL {
            let row = self.row(o);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(DomainError::new(format!(
                    "{} row has an entry outside [0, 1]: {row:?}",
                    o.name()
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(DomainError::new(format!("{} row sums to {sum}, expected 1", o.name())));
            }
        }
        Ok(())
    }

    /// Inverse-CDF draw of a transition from the row for `outcome`.
    pub fn sample(&self, outcome: Outcome, draw: f64) -> Transition {
        let row = self.row(outcome);
        let mut acc = 0.0;
        for t in Transition::ALL {
            acc += row[t.index()];
            if draw < acc {
                return t;
            }
        }
        *Transition::ALL
            .iter()
            .rev()
            .find(|t| row[t.index()] > 0.0)
            .unwrap_or(&Transition::Downgrade)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdRule {
    AlwaysCooperate,
    AlwaysDefect,
    TitForTat,
    Grim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    UniformRandom,
    FixedMixed { mixture: MixedStrategy },
    TransitionBot { table: TransitionPolicyTable },
    PdRule { rule: PdRule },
    Llm { endpoint: ModelEndpoint },
    Replay { script: Vec<Action> },
    Human,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: AgentKind,
}

impl AgentSpec {
    pub fn new(name: impl Into<String>, kind: AgentKind) -> Self {
        AgentSpec {
            name: name.into(),
            kind,
        }
    }

    pub fn is_human(&self) -> bool {
        matches!(self.kind, AgentKind::Human)
    }

    pub fn is_llm(&self) -> bool {
        matches!(self.kind, AgentKind::Llm { .. })
    }

    /// Checks the kind-specific parameters, optionally against a game.
    pub fn validate(&self, game: Option<Game>) -> Result<(), DomainError> {
        match &self.kind {
            AgentKind::FixedMixed { mixture } => {
                MixedStrategy::new(mixture.probabilities().to_vec())?;
                if let Some(g) = game {
                    if mixture.len() != g.action_count() {
                        return Err(DomainError::new(format!(
                            "agent `{}`: mixture has {} weights but {g} has {} actions",
                            self.name,
                            mixture.len(),
                            g.action_count()
                        )));
                    }
                }
            }
            AgentKind::TransitionBot { table } => {
                table.validate()?;
                if game == Some(Game::Pd) {
                    return Err(DomainError::new(format!(
                        "agent `{}`: transition bots only play Rock-Paper-Scissors",
                        self.name
                    )));
                }
            }
            AgentKind::PdRule { .. } => {
                if game == Some(Game::Rps) {
                    return Err(DomainError::new(format!(
                        "agent `{}`: PD rules cannot play Rock-Paper-Scissors",
                        self.name
                    )));
                }
            }
            AgentKind::Replay { script } => {
                if let Some(g) = game {
                    if let Some(a) = script.iter().find(|a| a.game() != g) {
                        return Err(DomainError::new(format!(
                            "agent `{}`: scripted action {a} is not a {g} action",
                            self.name
                        )));
                    }
                }
            }
            AgentKind::Llm { endpoint } => endpoint.validate()?,
            AgentKind::UniformRandom | AgentKind::Human => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub game: Game,
    pub own_history: Vec<Action>,
    pub opponent_history: Vec<Action>,
    pub outcome_history: Vec<Outcome>,
    pub cumulative_payoff: f64,
    /// Number of draws consumed from this agent's stream.
    pub rng_cursor: u64,
}

impl AgentState {
    pub fn new(game: Game) -> Self {
        AgentState {
            game,
            own_history: Vec::new(),
            opponent_history: Vec::new(),
            outcome_history: Vec::new(),
            cumulative_payoff: 0.0,
            rng_cursor: 0,
        }
    }

    pub fn rounds(&self) -> usize {
        self.own_history.len()
    }

    pub fn record(&mut self, own: Action, opponent: Action, outcome: Outcome, payoff: f64) {
        self.own_history.push(own);
        self.opponent_history.push(opponent);
        self.outcome_history.push(outcome);
        self.cumulative_payoff += payoff;
    }
}

fn uniform_action(game: Game, draw: f64) -> Action {
    let n = game.action_count();
    let i = ((draw * n as f64) as usize).min(n - 1);
    game.actions()[i]
}

/// One decision of a rule-based agent.
pub fn policy_step(spec: &AgentSpec, state: &AgentState, draw: f64) -> Result<Action> {
    if !(0.0..1.0).contains(&draw) {
        return Err(DomainError::new(format!("random draw {draw} outside [0, 1)")).into());
    }
    let game = state.game;
    match &spec.kind {
        AgentKind::UniformRandom => Ok(uniform_action(game, draw)),
        AgentKind::FixedMixed { mixture } => {
            if mixture.len() != game.action_count() {
                return Err(DomainError::new(format!(
                    "agent `{}`: mixture length {} does not fit {game}",
                    spec.name,
                    mixture.len()
                ))
                .into());
            }
            Ok(game.actions()[mixture.sample(draw)])
        }
        AgentKind::TransitionBot { table } => {
            if game != Game::Rps {
                return Err(DomainError::new("transition bots only play Rock-Paper-Scissors").into());
            }
            match (state.own_history.last(), state.outcome_history.last()) {
                (Some(prev), Some(outcome)) => Ok(table.sample(*outcome, draw).apply(*prev)?),
                _ => Ok(uniform_action(game, draw)),
            }
        }
        AgentKind::PdRule { rule } => {
            if game != Game::Pd {
                return Err(DomainError::new("PD rules cannot play Rock-Paper-Scissors").into());
            }
            Ok(match rule {
                PdRule::AlwaysCooperate => Action::Cooperate,
                PdRule::AlwaysDefect => Action::Defect,
                PdRule::TitForTat => state.opponent_history.last().copied().unwrap_or(Action::Cooperate),
                PdRule::Grim => {
                    if state.opponent_history.contains(&Action::Defect) {
                        Action::Defect
                    } else {
                        Action::Cooperate
                    }
                }
            })
        }
        AgentKind::Replay { script } => script.get(state.rounds()).copied().ok_or_else(|| {
            Error::Protocol(format!(
                "replay agent `{}` exhausted its script after {} actions",
                spec.name,
                script.len()
            ))
        }),
        AgentKind::Llm { .. } => Err(Error::Protocol(format!(
            "agent `{}` is model-backed and must be driven through the gateway",
            spec.name
        ))),
        AgentKind::Human => Err(Error::Protocol(format!(
            "agent `{}` is human and must be served through the session service",
            spec.name
        ))),
    }
}

pub fn build_transition_bot(name: impl Into<String>, table: TransitionPolicyTable) -> Result<AgentSpec, DomainError> {
    table.validate()?;
    Ok(AgentSpec::new(name, AgentKind::TransitionBot { table }))
}

pub fn builtin_catalog() -> BTreeMap<String, AgentSpec> {
    let mut specs = vec![
        AgentSpec::new("uniform", AgentKind::UniformRandom),
        AgentSpec::new(
            "nash_rps",
            AgentKind::FixedMixed {
                mixture: MixedStrategy::new(vec![0.25, 0.5, 0.25]).unwrap(),
            },
        ),
        AgentSpec::new(
            "allc",
            AgentKind::PdRule {
                rule: PdRule::AlwaysCooperate,
            },
        ),
        AgentSpec::new(
            "alld",
            AgentKind::PdRule {
                rule: PdRule::AlwaysDefect,
            },
        ),
        AgentSpec::new(
            "titfortat",
            AgentKind::PdRule {
                rule: PdRule::TitForTat,
            },
        ),
        AgentSpec::new("grim", AgentKind::PdRule { rule: PdRule::Grim }),
    ];
    for (name, table) in [
        ("wslu", TransitionPolicyTable::wslu()),
        ("wdls", TransitionPolicyTable::wdls()),
        ("wslc", TransitionPolicyTable::wslc()),
    ] {
        specs.push(build_transition_bot(name, table).expect("bundled tables are valid"));
    }
    specs.into_iter().map(|s| (s.name.clone(), s)).collect()
}

pub fn builtin(name: &str) -> Option<AgentSpec> {
    builtin_catalog().remove(name)
}
