//! Win/payoff differentials and cooperation rates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::DomainError;
use crate::game::{Action, Outcome};
use crate::persistence::Log;
use crate::protocol::RoundRecord;

pub const SOURCE_COMPUTED: &str = "computed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferentialReport {
    pub agent: String,
    pub bot: String,
    /// Completed matches averaged over; 0 for reference rows.
    pub matches: usize,
    /// Mean over matches of (agent round wins - bot round wins).
    pub win_differential: f64,
    /// Mean over matches of (agent points - bot points).
    pub payoff_differential: f64,
    pub source: String,
}

/// Agent-minus-bot differentials. A reference row for the pair takes
/// precedence; otherwise every completed match between the two is averaged.
pub fn differentials(log: &Log, agent: &str, bot: &str) -> Result<DifferentialReport, DomainError> {
    if let Some(r) = log
        .differential_refs
        .iter()
        .find(|r| r.population == agent && r.opponent == bot)
    {
        return Ok(DifferentialReport {
            agent: agent.to_string(),
            bot: bot.to_string(),
            matches: 0,
            win_differential: r.win_differential,
            payoff_differential: r.payoff_differential,
            source: r.source.clone(),
        });
    }
    computed_differentials(log, agent, bot)
}

/// Differentials from the log's own rounds, ignoring reference rows.
pub fn computed_differentials(log: &Log, agent: &str, bot: &str) -> Result<DifferentialReport, DomainError> {
    let mut per_match: BTreeMap<(&str, &str), (f64, f64)> = BTreeMap::new();
    for r in &log.rounds {
        if log.is_aborted(&r.session_id, &r.match_id) {
            continue;
        }
        let Some(slot) = pair_slot(r, agent, bot) else { continue };
        let other = 1 - slot;
        let e = per_match.entry((&r.session_id, &r.match_id)).or_default();
        e.0 += match r.outcomes[slot] {
            Outcome::Win => 1.0,
            Outcome::Lose => -1.0,
            Outcome::Tie => 0.0,
        };
        e.1 += r.payoff(slot) - r.payoff(other);
    }
    if per_match.is_empty() {
        return Err(DomainError::new(format!(
            "no completed matches between `{agent}` and `{bot}`"
        )));
    }
    let n = per_match.len() as f64;
    Ok(DifferentialReport {
        agent: agent.to_string(),
        bot: bot.to_string(),
        matches: per_match.len(),
        win_differential: per_match.values().map(|v| v.0).sum::<f64>() / n,
        payoff_differential: per_match.values().map(|v| v.1).sum::<f64>() / n,
        source: SOURCE_COMPUTED.into(),
    })
}

/// Slot of `agent` when the round is agent vs bot. In a self-pair the agent
/// takes slot 0.
fn pair_slot(r: &RoundRecord, agent: &str, bot: &str) -> Option<usize> {
    let ids = &r.agent_ids;
    if ids[0] == agent && ids[1] == bot {
        Some(0)
    } else if ids[1] == agent && ids[0] == bot {
        Some(1)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Treatment,
    Round,
    Agent,
}

impl Grouping {
    pub fn name(self) -> &'static str {
        match self {
            Grouping::Treatment => "treatment",
            Grouping::Round => "round",
            Grouping::Agent => "agent",
        }
    }
}

impl std::str::FromStr for Grouping {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, DomainError> {
        match s {
            "treatment" => Ok(Grouping::Treatment),
            "round" => Ok(Grouping::Round),
            "agent" => Ok(Grouping::Agent),
            _ => Err(DomainError::new(format!(
                "unknown grouping `{s}` (treatment, round, agent)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooperationRow {
    pub group: String,
    pub percent: f64,
    /// Counts are absent for pre-aggregated reference rows.
    pub cooperative: Option<u64>,
    pub total: Option<u64>,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooperationReport {
    pub grouping: Grouping,
    pub rows: Vec<CooperationRow>,
    pub warnings: Vec<String>,
}

impl CooperationReport {
    pub fn get(&self, group: &str) -> Option<&CooperationRow> {
        self.rows.iter().find(|r| r.group == group)
    }
}

const NO_TREATMENT: &str = "none";

/// Percentage of Cooperate choices per group, over completed matches.
/// Groups keep the order of their first appearance in the log; reference
/// rows follow computed ones when grouping by treatment.
pub fn cooperation_rates(log: &Log, grouping: Grouping) -> CooperationReport {
    let mut order: Vec<String> = Vec::new();
    let mut tally: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut push = |key: String, coop: bool| {
        let e = tally.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0, 0)
        });
        e.0 += coop as u64;
        e.1 += 1;
    };
    let mut skipped = 0;
    for r in &log.rounds {
        if log.is_aborted(&r.session_id, &r.match_id) {
            skipped += 1;
            continue;
        }
        for slot in 0..2 {
            let coop = r.actions[slot] == Action::Cooperate;
            match grouping {
                Grouping::Treatment => push(r.treatment.clone().unwrap_or_else(|| NO_TREATMENT.into()), coop),
                Grouping::Round => push(r.round_index.to_string(), coop),
                Grouping::Agent => push(r.agent_ids[slot].clone(), coop),
            }
        }
    }
    if skipped > 0 {
        warnings.push(format!("{skipped} round(s) of aborted matches excluded"));
    }
    if grouping == Grouping::Treatment {
        let missing: BTreeSet<String> = log
            .starts
            .values()
            .map(|s| s.treatment.clone().unwrap_or_else(|| NO_TREATMENT.into()))
            .filter(|t| !tally.contains_key(t))
            .collect();
        for t in missing {
            warnings.push(format!("treatment `{t}` has no completed rounds; omitted"));
        }
    }
    let mut rows: Vec<CooperationRow> = order
        .into_iter()
        .map(|g| {
            let (c, n) = tally[&g];
            CooperationRow {
                percent: 100.0 * c as f64 / n as f64,
                group: g,
                cooperative: Some(c),
                total: Some(n),
                source: SOURCE_COMPUTED.into(),
            }
        })
        .collect();
    if grouping == Grouping::Round {
        rows.sort_by_key(|r| r.group.parse::<usize>().unwrap_or(usize::MAX));
    }
    if grouping == Grouping::Treatment {
        for r in &log.cooperation_refs {
            rows.push(CooperationRow {
                group: r.treatment.clone(),
                percent: r.percent,
                cooperative: None,
                total: None,
                source: r.source.clone(),
            });
        }
    }
    CooperationReport {
        grouping,
        rows,
        warnings,
    }
}
