//! Experiment orchestration: continuation rules, session plans, seeded
//! random streams, the round engine and the session runner.

mod engine;
mod plan;
pub mod presets;
mod record;
mod rng;
mod session;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DomainError, Error, Result};

pub use engine::{run_match, EngineStatus, MatchEngine, MatchOutput, MatchResult, MatchSetup, SlotView};
pub use plan::{
    plan_bot_series, plan_pd_session, plan_pd_session_with, plan_rps_tournament, ContinuationMode, Ordering,
    Participant, PlanKind, PlannedMatch, SessionPlan,
};
pub use record::{MatchEnd, MatchStart, RoundRecord, Termination};
pub use rng::{stream_seed, DrawStream, NATURE_SLOT};
pub use session::{
    execute_plan, match_events, replay_run, run_session, simulate_mean_payoffs, ReplayReport, RunOptions, RunSummary,
    LOG_FILE, MANIFEST_FILE,
};

/// How a match decides whether another round is played.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ContinuationRule {
    /// After every round the match continues with probability `delta`.
    Dice { delta: f64 },
    /// Exactly `horizon` rounds.
    Finite { horizon: usize },
}

impl ContinuationRule {
    pub fn validate(&self) -> Result<(), DomainError> {
        match *self {
            ContinuationRule::Dice { delta } if !(0.0..1.0).contains(&delta) => Err(DomainError::new(format!(
                "continuation probability {delta} outside [0, 1)"
            ))),
            ContinuationRule::Finite { horizon: 0 } => Err(DomainError::new("horizon must be positive")),
            _ => Ok(()),
        }
    }

    /// Treatment tag used in logs and reports, e.g. `delta=0.75` or `H=4`.
    pub fn label(&self) -> String {
        match *self {
            ContinuationRule::Dice { delta } => format!("delta={delta}"),
            ContinuationRule::Finite { horizon } => format!("H={horizon}"),
        }
    }

    pub fn parse_label(text: &str) -> Result<Self, DomainError> {
        let t = text.trim();
        let rule = if let Some(v) = t.strip_prefix("delta=") {
            ContinuationRule::Dice {
                delta: v.parse().map_err(|_| DomainError::new(format!("bad delta in `{t}`")))?,
            }
        } else if let Some(v) = t.strip_prefix("H=") {
            ContinuationRule::Finite {
                horizon: v
                    .parse()
                    .map_err(|_| DomainError::new(format!("bad horizon in `{t}`")))?,
            }
        } else {
            return Err(DomainError::new(format!(
                "treatment `{t}` is neither delta=<p> nor H=<n>"
            )));
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl fmt::Display for ContinuationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    Continue,
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuationDraw {
    pub decision: Continuation,
    /// Four-sided die face shown to participants; only defined when delta is
    /// a multiple of 1/4.
    pub die_face: Option<u8>,
}

/// Applies a Dice rule to one uniform draw in [0, 1).
///
/// The match continues iff `draw < delta`. When delta is k/4 the draw is
/// also read as a die roll `floor(4 draw) + 1`, so faces 1..=k continue; with
/// delta = 0 the match always ends on a 4.
pub fn sample_continuation(rule: &ContinuationRule, round_index: usize, draw: f64) -> Result<ContinuationDraw> {
    let ContinuationRule::Dice { delta } = *rule else {
        return Err(Error::Protocol(format!(
            "round {round_index}: {rule} has a fixed horizon; no continuation draw applies"
        )));
    };
    rule.validate()?;
    if !(0.0..1.0).contains(&draw) {
        return Err(DomainError::new(format!("random draw {draw} outside [0, 1)")).into());
    }
    let decision = if draw < delta {
        Continuation::Continue
    } else {
        Continuation::End
    };
    let die_face =
        crate::gateway::prompt::continuing_faces(delta).map(
            |k| {
                if k == 0 {
                    4
                } else {
                    ((draw * 4.0) as u8).min(3) + 1
                }
            },
        );
    Ok(ContinuationDraw { decision, die_face })
}

/// Finite: H. Dice: 1 / (1 - delta), the mean of the geometric length law.
pub fn expected_match_length(rule: &ContinuationRule) -> Result<f64, DomainError> {
    match *rule {
        ContinuationRule::Finite { horizon } => {
            rule.validate()?;
            Ok(horizon as f64)
        }
        ContinuationRule::Dice { delta } => {
            if delta >= 1.0 {
                return Err(DomainError::new("delta = 1 never ends; expected length is infinite"));
            }
            rule.validate()?;
            Ok(1.0 / (1.0 - delta))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dice(delta: f64) -> ContinuationRule {
        ContinuationRule::Dice { delta }
    }

    #[test]
    fn continuation_examples() {
        let d = sample_continuation(&dice(0.75), 1, 0.2).unwrap();
        assert_eq!(d.decision, Continuation::Continue);
        assert!(matches!(d.die_face, Some(1..=3)));

        for draw in [0.0, 0.3, 0.999] {
            let d = sample_continuation(&dice(0.0), 1, draw).unwrap();
            assert_eq!(
                d,
                ContinuationDraw {
                    decision: Continuation::End,
                    die_face: Some(4)
                }
            );
        }

        let d = sample_continuation(&dice(0.5), 3, 0.99).unwrap();
        assert_eq!(d.decision, Continuation::End);
        assert_eq!(d.die_face, Some(4));

        assert!(sample_continuation(&ContinuationRule::Finite { horizon: 2 }, 1, 0.5).is_err());
        assert!(sample_continuation(&dice(0.5), 1, 1.0).is_err());
    }

    #[test]
    fn die_face_agrees_with_decision() {
        for delta in [0.25, 0.5, 0.75] {
            let k = (delta * 4.0) as u8;
            for i in 0..1000 {
                let draw = i as f64 / 1000.0;
                let d = sample_continuation(&dice(delta), 1, draw).unwrap();
                let face = d.die_face.unwrap();
                assert_eq!(
                    face <= k,
                    d.decision == Continuation::Continue,
                    "delta {delta} draw {draw}"
                );
            }
        }
        assert_eq!(sample_continuation(&dice(0.9), 1, 0.1).unwrap().die_face, None);
    }

    #[test]
    fn expected_lengths() {
        assert_eq!(expected_match_length(&dice(0.75)).unwrap(), 4.0);
        assert_eq!(expected_match_length(&dice(0.0)).unwrap(), 1.0);
        assert_eq!(
            expected_match_length(&ContinuationRule::Finite { horizon: 2 }).unwrap(),
            2.0
        );
        assert!(expected_match_length(&dice(1.0)).is_err());
    }

    #[test]
    fn labels_round_trip() {
        for rule in [
            dice(0.0),
            dice(0.5),
            dice(0.75),
            ContinuationRule::Finite { horizon: 4 },
        ] {
            assert_eq!(ContinuationRule::parse_label(&rule.label()).unwrap(), rule);
        }
        assert_eq!(dice(0.75).label(), "delta=0.75");
        assert!(ContinuationRule::parse_label("delta=1").is_err());
        let json = serde_json::to_string(&dice(0.5)).unwrap();
        assert_eq!(json, r#"{"mode":"dice","delta":0.5}"#);
    }
}
