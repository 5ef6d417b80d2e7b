use serde::{Deserialize, Serialize};

use crate::game::{Action, Outcome};
use crate::protocol::ContinuationRule;

/// One resolved round. Slot 0 is the row player (Red in PD).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub session_id: String,
    pub match_id: String,
    /// 1-based.
    pub round_index: usize,
    pub agent_ids: [String; 2],
    pub actions: [Action; 2],
    #[serde(with = "crate::points::pair")]
    pub payoffs: (f64, f64),
    pub outcomes: [Outcome; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    /// Die face rolled after this round, for Dice rules with a die narrative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub die_face: Option<u8>,
    /// Whether another round of the same match follows.
    pub continues: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RoundRecord {
    /// Slot of `agent_id`, or the first slot when the agent plays itself.
    pub fn slot_of(&self, agent_id: &str) -> Option<usize> {
        self.agent_ids.iter().position(|a| a == agent_id)
    }

    pub fn slots_of<'a>(&'a self, agent_id: &'a str) -> impl Iterator<Item = usize> + 'a {
        (0..2).filter(move |&s| self.agent_ids[s] == agent_id)
    }

    pub fn payoff(&self, slot: usize) -> f64 {
        if slot == 0 {
            self.payoffs.0
        } else {
            self.payoffs.1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    HorizonReached,
    DiceEnded,
    ProtocolViolation,
    HumanAbandoned,
}

impl Termination {
    pub fn is_aborted(self) -> bool {
        matches!(self, Termination::ProtocolViolation | Termination::HumanAbandoned)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchStart {
    pub agent_ids: [String; 2],
    pub agent_names: [String; 2],
    pub rule: ContinuationRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    pub part: usize,
    pub repetition: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchEnd {
    pub termination: Termination,
    pub rounds: usize,
    #[serde(with = "crate::points::pair")]
    pub final_totals: (f64, f64),
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_payoffs_serialize_as_integers() {
        let r = RoundRecord {
            session_id: "s".into(),
            match_id: "m001".into(),
            round_index: 1,
            agent_ids: ["a".into(), "b".into()],
            actions: [Action::Defect, Action::Defect],
            payoffs: (35.0, 35.0),
            outcomes: [Outcome::Tie, Outcome::Tie],
            treatment: Some("H=1".into()),
            die_face: None,
            continues: false,
            timestamp: None,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""payoffs":[35,35]"#), "{json}");
        assert!(!json.contains("timestamp"));
        let back: RoundRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
