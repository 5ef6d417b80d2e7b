use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agents::AgentSpec;
use crate::error::{Error, Result};
use crate::game::{Game, Role};
use crate::gateway::ModelEndpoint;
use crate::matrix::{validate_matrix, PayoffMatrix};
use crate::protocol::ContinuationRule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    /// Unique within a plan; this is the id written to round records.
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Role>,
    pub agent: AgentSpec,
}

impl Participant {
    pub fn new(id: impl Into<String>, group: Option<Role>, agent: AgentSpec) -> Self {
        Participant {
            id: id.into(),
            group,
            agent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedMatch {
    pub match_id: String,
    /// Participant indices; slot 0 is the row player (Red in PD).
    pub slots: [usize; 2],
    pub rule: ContinuationRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    /// 1-based treatment block.
    pub part: usize,
    /// 0-based repetition (RPS) or position within the block (PD).
    pub repetition: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Tournament,
    BotSeries,
    PdSession,
    Custom,
}

/// Ascending (Normal) or descending (USD) treatment sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    Normal,
    Usd,
}

impl std::str::FromStr for Ordering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(Ordering::Normal),
            "usd" => Ok(Ordering::Usd),
            _ => Err(Error::Config(format!("unknown ordering `{s}` (normal, usd)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuationMode {
    Dice,
    Finite,
}

impl ContinuationMode {
    /// Replication treatments in Normal order.
    pub fn treatments(self) -> Vec<ContinuationRule> {
        match self {
            ContinuationMode::Dice => [0.0, 0.5, 0.75]
                .into_iter()
                .map(|delta| ContinuationRule::Dice { delta })
                .collect(),
            ContinuationMode::Finite => [1, 2, 4]
                .into_iter()
                .map(|horizon| ContinuationRule::Finite { horizon })
                .collect(),
        }
    }
}

impl std::str::FromStr for ContinuationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dice" => Ok(ContinuationMode::Dice),
            "finite" => Ok(ContinuationMode::Finite),
            _ => Err(Error::Config(format!("unknown continuation mode `{s}` (dice, finite)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    pub kind: PlanKind,
    pub game: Game,
    pub matrix: PayoffMatrix,
    pub participants: Vec<Participant>,
    pub matches: Vec<PlannedMatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds_per_match: Option<usize>,
    pub repetitions: usize,
    #[serde(default)]
    pub treatments: Vec<ContinuationRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<Ordering>,
    /// Matches each subject plays per treatment block.
    pub matches_per_part: usize,
    pub master_seed: u64,
}

fn match_id(i: usize) -> String {
    format!("m{:04}", i + 1)
}

/// Ids from agent names, suffixed when a name repeats.
fn unique_ids(agents: &[AgentSpec]) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    agents
        .iter()
        .map(|a| {
            let n = seen.entry(&a.name).or_insert(0);
            *n += 1;
            if *n == 1 {
                a.name.clone()
            } else {
                format!("{}#{}", a.name, n)
            }
        })
        .collect()
}

/// Every unordered pair of agents (self-pairs optional) once per repetition.
pub fn plan_rps_tournament(
    agents: &[AgentSpec],
    repetitions: usize,
    rounds: usize,
    include_self_pairs: bool,
) -> Result<SessionPlan> {
    if agents.is_empty() {
        return Err(Error::Plan("a tournament needs at least one agent".into()));
    }
    if repetitions == 0 || rounds == 0 {
        return Err(Error::Plan("repetitions and rounds must be positive".into()));
    }
    let participants: Vec<Participant> = unique_ids(agents)
        .into_iter()
        .zip(agents)
        .map(|(id, a)| Participant::new(id, None, a.clone()))
        .collect();
    let n = agents.len();
    let mut matches = Vec::new();
    for rep in 0..repetitions {
        for i in 0..n {
            let first = if include_self_pairs { i } else { i + 1 };
            for j in first..n {
                matches.push(PlannedMatch {
                    match_id: match_id(matches.len()),
                    slots: [i, j],
                    rule: ContinuationRule::Finite { horizon: rounds },
                    treatment: None,
                    part: 1,
                    repetition: rep,
                });
            }
        }
    }
    if matches.is_empty() {
        return Err(Error::Plan(
            "a single agent without self-pairs yields no matches".into(),
        ));
    }
    Ok(SessionPlan {
        session_id: "rps-tournament".into(),
        kind: PlanKind::Tournament,
        game: Game::Rps,
        matrix: PayoffMatrix::rps_modified(),
        participants,
        matches,
        rounds_per_match: Some(rounds),
        repetitions,
        treatments: Vec::new(),
        ordering: None,
        matches_per_part: 0,
        master_seed: 0,
    })
}

/// One match per (bot, repetition) with `agent` in slot 0.
pub fn plan_bot_series(
    agent: &AgentSpec,
    bots: &[AgentSpec],
    repetitions: usize,
    rounds: usize,
) -> Result<SessionPlan> {
    if bots.is_empty() {
        return Err(Error::Plan("a bot series needs at least one bot".into()));
    }
    if repetitions == 0 || rounds == 0 {
        return Err(Error::Plan("repetitions and rounds must be positive".into()));
    }
    let mut all = vec![agent.clone()];
    all.extend(bots.iter().cloned());
    let participants: Vec<Participant> = unique_ids(&all)
        .into_iter()
        .zip(all)
        .map(|(id, a)| Participant::new(id, None, a))
        .collect();
    let mut matches = Vec::new();
    for rep in 0..repetitions {
        for b in 0..bots.len() {
            matches.push(PlannedMatch {
                match_id: match_id(matches.len()),
                slots: [0, b + 1],
                rule: ContinuationRule::Finite { horizon: rounds },
                treatment: None,
                part: 1,
                repetition: rep,
            });
        }
    }
    Ok(SessionPlan {
        session_id: "bot-series".into(),
        kind: PlanKind::BotSeries,
        game: Game::Rps,
        matrix: PayoffMatrix::rps_modified(),
        participants,
        matches,
        rounds_per_match: Some(rounds),
        repetitions,
        treatments: Vec::new(),
        ordering: None,
        matches_per_part: 0,
        master_seed: 0,
    })
}

/// PD session with the replication treatments of `mode`, ascending for
/// Normal and descending for USD.
pub fn plan_pd_session(agents: &[Participant], ordering: Ordering, mode: ContinuationMode) -> Result<SessionPlan> {
    let mut treatments = mode.treatments();
    if ordering == Ordering::Usd {
        treatments.reverse();
    }
    let mut plan = plan_pd_session_with(agents, treatments)?;
    plan.ordering = Some(ordering);
    Ok(plan)
}

/// Rotation matching: in global match round m, Red i meets Blue
/// (i + m) mod N/2. The N/2 match rounds are split into consecutive blocks,
/// one per treatment, in the given order.
pub fn plan_pd_session_with(agents: &[Participant], treatments: Vec<ContinuationRule>) -> Result<SessionPlan> {
    let n = agents.len();
    if n == 0 || !n.is_multiple_of(6) {
        return Err(Error::Plan(format!(
            "PD sessions need a multiple of 6 participants, got {n}"
        )));
    }
    if treatments.is_empty() {
        return Err(Error::Plan("PD sessions need at least one treatment".into()));
    }
    for t in &treatments {
        t.validate()?;
    }
    let reds: Vec<usize> = (0..n).filter(|&i| agents[i].group == Some(Role::Red)).collect();
    let blues: Vec<usize> = (0..n).filter(|&i| agents[i].group == Some(Role::Blue)).collect();
    let g = n / 2;
    if reds.len() != g || blues.len() != g {
        return Err(Error::Plan(format!(
            "unbalanced groups: {} Red and {} Blue (each group needs {g}, untagged participants are not allowed)",
            reds.len(),
            blues.len()
        )));
    }
    if !g.is_multiple_of(treatments.len()) {
        return Err(Error::Plan(format!(
            "{g} match rounds cannot be split evenly into {} treatment blocks",
            treatments.len()
        )));
    }
    let per_block = g / treatments.len();
    let mut matches = Vec::new();
    for m in 0..g {
        let block = m / per_block;
        let rule = treatments[block];
        for i in 0..g {
            matches.push(PlannedMatch {
                match_id: match_id(matches.len()),
                slots: [reds[i], blues[(i + m) % g]],
                rule,
                treatment: Some(rule.label()),
                part: block + 1,
                repetition: m % per_block,
            });
        }
    }
    let ids: BTreeSet<&str> = agents.iter().map(|p| p.id.as_str()).collect();
    if ids.len() != n {
        return Err(Error::Plan("participant ids must be unique".into()));
    }
    Ok(SessionPlan {
        session_id: "pd-session".into(),
        kind: PlanKind::PdSession,
        game: Game::Pd,
        matrix: PayoffMatrix::pd_table(),
        participants: agents.to_vec(),
        matches,
        rounds_per_match: None,
        repetitions: 1,
        treatments,
        ordering: None,
        matches_per_part: per_block,
        master_seed: 0,
    })
}

impl SessionPlan {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_session_id(mut self, id: impl Into<String>) -> Self {
        self.session_id = id.into();
        self
    }

    pub fn with_matrix(mut self, matrix: PayoffMatrix) -> Self {
        self.matrix = matrix;
        self
    }

    /// Number of (match, slot) participations.
    pub fn agent_runs(&self) -> usize {
        2 * self.matches.len()
    }

    /// Number of treatment parts announced to participants.
    pub fn parts(&self) -> usize {
        self.treatments.len().max(1)
    }

    /// Distinct model endpoints used by the plan.
    pub fn endpoints(&self) -> Vec<ModelEndpoint> {
        let mut out: Vec<ModelEndpoint> = Vec::new();
        for p in &self.participants {
            if let crate::agents::AgentKind::Llm { endpoint } = &p.agent.kind {
                if !out.contains(endpoint) {
                    out.push(endpoint.clone());
                }
            }
        }
        out
    }

    pub fn has_human(&self) -> bool {
        self.participants.iter().any(|p| p.agent.is_human())
    }

    /// Matches per participant id, split by treatment label.
    pub fn schedule_counts(&self) -> BTreeMap<String, BTreeMap<String, usize>> {
        let mut out: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for m in &self.matches {
            let t = m.treatment.clone().unwrap_or_else(|| m.rule.label());
            let mut slots = m.slots.to_vec();
            slots.dedup();
            for s in slots {
                *out.entry(self.participants[s].id.clone())
                    .or_default()
                    .entry(t.clone())
                    .or_default() += 1;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let violations = validate_matrix(&self.matrix);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Validation(format!(
                "matrix `{}`: {}",
                self.matrix.name,
                list.join("; ")
            )));
        }
        if self.matrix.game != Some(self.game) {
            return Err(Error::Validation(format!(
                "matrix `{}` is not a {} matrix",
                self.matrix.name, self.game
            )));
        }
        let mut ids = BTreeSet::new();
        for p in &self.participants {
            p.agent.validate(Some(self.game))?;
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Validation(format!("duplicate participant id `{}`", p.id)));
            }
        }
        let mut match_ids = BTreeSet::new();
        for m in &self.matches {
            if !match_ids.insert(m.match_id.as_str()) {
                return Err(Error::Validation(format!("duplicate match id `{}`", m.match_id)));
            }
            if m.slots.iter().any(|&s| s >= self.participants.len()) {
                return Err(Error::Validation(format!(
                    "match `{}` names a missing participant",
                    m.match_id
                )));
            }
            m.rule.validate()?;
            if self.game == Game::Pd {
                let [r, b] = m.slots;
                if self.participants[r].group != Some(Role::Red) || self.participants[b].group != Some(Role::Blue) {
                    return Err(Error::Validation(format!(
                        "match `{}` must pair a Red participant (slot 0) with a Blue one (slot 1)",
                        m.match_id
                    )));
                }
            }
        }
        if self.kind == PlanKind::PdSession {
            self.check_rotation()?;
        }
        Ok(())
    }

    /// No Red-Blue pair meets twice; everyone plays N/2 matches, evenly split
    /// over the treatment blocks.
    pub fn check_rotation(&self) -> Result<()> {
        let n = self.participants.len();
        let mut pairs = BTreeSet::new();
        for m in &self.matches {
            if !pairs.insert(m.slots) {
                let [r, b] = m.slots;
                return Err(Error::Validation(format!(
                    "{} and {} meet twice",
                    self.participants[r].id, self.participants[b].id
                )));
            }
        }
        let per_treatment = n / 2 / self.treatments.len().max(1);
        for (id, by_treatment) in self.schedule_counts() {
            let total: usize = by_treatment.values().sum();
            if total != n / 2 {
                return Err(Error::Validation(format!(
                    "{id} plays {total} matches, expected {}",
                    n / 2
                )));
            }
            if by_treatment.len() != self.treatments.len() || by_treatment.values().any(|&c| c != per_treatment) {
                return Err(Error::Validation(format!(
                    "{id} is not scheduled for {per_treatment} matches in every treatment"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::builtin;

    fn spec(name: &str) -> AgentSpec {
        builtin(name).unwrap()
    }

    fn pd_people(n: usize) -> Vec<Participant> {
        (0..n)
            .map(|i| {
                let group = if i < n / 2 { Role::Red } else { Role::Blue };
                Participant::new(format!("p{i:02}"), Some(group), spec("titfortat"))
            })
            .collect()
    }

    #[test]
    fn tournament_sizes() {
        let six: Vec<AgentSpec> = ["uniform", "nash_rps", "wslu", "wdls", "wslc", "uniform"]
            .iter()
            .map(|n| spec(n))
            .collect();
        let p = plan_rps_tournament(&six, 3, 50, true).unwrap();
        assert_eq!(p.matches.len(), 63);
        assert_eq!(p.agent_runs(), 126);
        assert_eq!(p.participants[5].id, "uniform#2");
        p.validate().unwrap();
        assert_eq!(plan_rps_tournament(&six, 3, 50, false).unwrap().matches.len(), 45);

        let two = [spec("wslu"), spec("wdls")];
        let p = plan_rps_tournament(&two, 1, 50, true).unwrap();
        let pairs: Vec<[usize; 2]> = p.matches.iter().map(|m| m.slots).collect();
        assert_eq!(pairs, vec![[0, 0], [0, 1], [1, 1]]);

        assert_eq!(
            plan_rps_tournament(&[spec("wslu")], 3, 50, true).unwrap().matches.len(),
            3
        );
        assert!(plan_rps_tournament(&[], 3, 50, true).is_err());
    }

    #[test]
    fn bot_series_sizes() {
        let p = plan_bot_series(&spec("nash_rps"), &[spec("wslu"), spec("wdls")], 3, 50).unwrap();
        assert_eq!(p.matches.len(), 6);
        assert!(p.matches.iter().all(|m| m.slots[0] == 0));
        assert_eq!(
            plan_bot_series(&spec("nash_rps"), &[spec("wslu")], 1, 50)
                .unwrap()
                .matches
                .len(),
            1
        );
    }

    #[test]
    fn pd_rotation_for_24() {
        let p = plan_pd_session(&pd_people(24), Ordering::Normal, ContinuationMode::Dice).unwrap();
        p.validate().unwrap();
        assert_eq!(p.matches.len(), 144);
        assert_eq!(p.matches_per_part, 4);
        let labels: Vec<String> = p.treatments.iter().map(|t| t.label()).collect();
        assert_eq!(labels, ["delta=0", "delta=0.5", "delta=0.75"]);
        for (_, by_t) in p.schedule_counts() {
            assert_eq!(by_t.values().sum::<usize>(), 12);
            assert!(by_t.values().all(|&c| c == 4));
        }
        // blocks are consecutive
        let parts: Vec<usize> = p.matches.iter().map(|m| m.part).collect();
        assert!(parts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn usd_reverses_normal() {
        let normal = plan_pd_session(&pd_people(24), Ordering::Normal, ContinuationMode::Finite).unwrap();
        let usd = plan_pd_session(&pd_people(24), Ordering::Usd, ContinuationMode::Finite).unwrap();
        let mut rev = normal.treatments.clone();
        rev.reverse();
        assert_eq!(usd.treatments, rev);
        assert_eq!(usd.treatments[0], ContinuationRule::Finite { horizon: 4 });
    }

    #[test]
    fn pd_rejects_bad_groups() {
        assert!(plan_pd_session(&pd_people(20), Ordering::Normal, ContinuationMode::Dice).is_err());
        let mut people = pd_people(6);
        people[0].group = Some(Role::Blue);
        assert!(plan_pd_session(&people, Ordering::Normal, ContinuationMode::Dice).is_err());
        let p = plan_pd_session(&pd_people(6), Ordering::Normal, ContinuationMode::Dice).unwrap();
        assert_eq!(p.matches_per_part, 1);
        p.validate().unwrap();
    }

    #[test]
    fn plan_round_trips_through_json() {
        let p = plan_pd_session(&pd_people(6), Ordering::Usd, ContinuationMode::Dice)
            .unwrap()
            .with_seed(9);
        let json = serde_json::to_string(&p).unwrap();
        let back: SessionPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
