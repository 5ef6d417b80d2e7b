//! One live session: a plan whose matches are played one after another,
//! with human slots answering over HTTP and every other slot decided by the
//! engine as soon as a round opens.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use gamelab_core::agents::{AgentKind, AgentSpec};
use gamelab_core::error::{Error, Result};
use gamelab_core::game::{Action, Game, Role};
use gamelab_core::gateway::{Gateway, ModelEndpoint};
use gamelab_core::matrix::PayoffMatrix;
use gamelab_core::persistence::{JsonlSink, RunManifest};
use gamelab_core::protocol::presets::{load_matrix, AgentRef, DEFAULT_SEED};
use gamelab_core::protocol::{
    match_events, ContinuationRule, MatchEngine, Participant, PlanKind, PlannedMatch, SessionPlan, SlotView,
    Termination, LOG_FILE, MANIFEST_FILE,
};
use serde::{Deserialize, Serialize};

const DEFAULT_ROUNDS: usize = 50;

/// Body of a create request. Either a complete `plan` (as stored in run
/// manifests) or the short form: one human against one `opponent`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub session_id: Option<String>,
    pub plan: Option<SessionPlan>,
    pub game: Option<Game>,
    pub opponent: Option<AgentRef>,
    /// Seat of the human in every match; for PD 0 is Red and 1 is Blue.
    pub human_slot: Option<usize>,
    pub matrix: Option<String>,
    /// RPS match length.
    pub rounds: Option<usize>,
    pub repetitions: Option<usize>,
    /// PD treatment labels, e.g. `delta=0.75` or `H=4`.
    pub treatments: Option<Vec<String>>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub endpoints: BTreeMap<String, ModelEndpoint>,
    pub timestamps: Option<bool>,
}

fn participant_id(spec: &AgentSpec, taken: &str) -> String {
    if spec.name == taken {
        format!("{}2", spec.name)
    } else {
        spec.name.clone()
    }
}

impl CreateSession {
    pub fn into_plan(self, session_id: String) -> Result<SessionPlan> {
        let mut plan = match self.plan {
            Some(plan) => {
                if self.opponent.is_some() || self.game.is_some() || self.rounds.is_some() || self.treatments.is_some()
                {
                    return Err(Error::Config("give either `plan` or the short form, not both".into()));
                }
                plan
            }
            None => self.short_plan()?,
        };
        plan.session_id = session_id;
        if let Some(seed) = self.seed {
            plan.master_seed = seed;
        }
        plan.validate()?;
        for m in &plan.matches {
            if !m.slots.iter().any(|&s| plan.participants[s].agent.is_human()) {
                return Err(Error::Config(format!(
                    "match `{}` has no human participant; run automated matches with the command-line runner",
                    m.match_id
                )));
            }
        }
        Ok(plan)
    }

    fn short_plan(&self) -> Result<SessionPlan> {
        let game = self.game.unwrap_or(Game::Rps);
        let opponent = self
            .opponent
            .as_ref()
            .ok_or_else(|| Error::Config("missing `opponent` (or a full `plan`)".into()))?
            .resolve(&self.endpoints)?;
        let human_slot = self.human_slot.unwrap_or(0);
        if human_slot > 1 {
            return Err(Error::Config(format!("human_slot must be 0 or 1, got {human_slot}")));
        }
        let human = AgentSpec::new("human", AgentKind::Human);
        let opp_id = participant_id(&opponent, "human");
        let mut seats = [
            Participant::new("human", None, human),
            Participant::new(opp_id, None, opponent),
        ];
        if human_slot == 1 {
            seats.swap(0, 1);
        }
        let matrix = match self.matrix.as_deref() {
            Some(name) => load_matrix(name)?,
            None => match game {
                Game::Rps => PayoffMatrix::rps_modified(),
                Game::Pd => PayoffMatrix::pd_table(),
            },
        };
        let reps = self.repetitions.unwrap_or(1);
        if reps == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        let rules = match game {
            Game::Rps => {
                if self.treatments.is_some() {
                    return Err(Error::Config("treatments apply to PD sessions only".into()));
                }
                vec![ContinuationRule::Finite {
                    horizon: self.rounds.unwrap_or(DEFAULT_ROUNDS),
                }]
            }
            Game::Pd => {
                if self.rounds.is_some() {
                    return Err(Error::Config("PD match length comes from `treatments`".into()));
                }
                let labels = self.treatments.clone().unwrap_or_else(|| vec!["delta=0.75".into()]);
                if labels.is_empty() {
                    return Err(Error::Config("treatments must not be empty".into()));
                }
                labels
                    .iter()
                    .map(|l| ContinuationRule::parse_label(l).map_err(|e| Error::Config(e.to_string())))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        if game == Game::Pd {
            seats[0].group = Some(Role::Red);
            seats[1].group = Some(Role::Blue);
        }
        let mut matches = Vec::new();
        for (block, rule) in rules.iter().enumerate() {
            for rep in 0..reps {
                matches.push(PlannedMatch {
                    match_id: format!("m{:04}", matches.len() + 1),
                    slots: [0, 1],
                    rule: *rule,
                    treatment: (game == Game::Pd).then(|| rule.label()),
                    part: block + 1,
                    repetition: rep,
                });
            }
        }
        Ok(SessionPlan {
            session_id: String::new(),
            kind: PlanKind::Custom,
            game,
            matrix,
            participants: seats.to_vec(),
            matches,
            rounds_per_match: match rules[0] {
                ContinuationRule::Finite { horizon } if game == Game::Rps => Some(horizon),
                _ => None,
            },
            repetitions: reps,
            treatments: if game == Game::Pd { rules } else { Vec::new() },
            ordering: None,
            matches_per_part: if game == Game::Pd { reps } else { 0 },
            master_seed: self.seed.unwrap_or(DEFAULT_SEED),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingChoices,
    /// A match ended and the next one starts on request.
    RevealingFeedback,
    Finished,
}

/// Why a write was refused.
#[derive(Debug)]
pub enum Rejection {
    Invalid(String),
    Conflict(String),
    Gone(String),
    Forbidden(String),
    Failed(Error),
}

impl From<Error> for Rejection {
    fn from(e: Error) -> Self {
        Rejection::Failed(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub game: Game,
    pub phase: Phase,
    pub expired: bool,
    pub matches: usize,
    pub matches_done: usize,
    pub match_id: Option<String>,
    pub round: usize,
    /// Match slots played by humans in the current match.
    pub human_slots: Vec<usize>,
}

/// Everything a human slot may read.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotState {
    pub session_id: String,
    pub phase: Phase,
    pub expired: bool,
    pub match_index: usize,
    pub matches: usize,
    pub match_id: String,
    pub treatment: Option<String>,
    pub view: SlotView,
}

/// Consistent read-only picture published after every write.
#[derive(Clone, Debug, Default)]
pub struct Snapshot {
    pub summary: Option<SessionSummary>,
    pub slots: BTreeMap<usize, SlotState>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SubmitOutcome {
    pub accepted: bool,
    pub round_complete: bool,
    pub match_finished: bool,
    pub phase: Phase,
}

pub struct LiveSession {
    plan: SessionPlan,
    dir: PathBuf,
    gateway: Arc<Gateway>,
    timestamps: bool,
    log: JsonlSink,
    index: usize,
    engine: Option<MatchEngine>,
    /// Final views of the match that just ended, shown while revealing.
    closing: Option<(String, Option<String>, [SlotView; 2])>,
    phase: Phase,
    expired: bool,
    matches_done: usize,
    last_activity: Instant,
}

impl LiveSession {
    /// Writes the manifest, opens the log and starts the first match.
    pub fn start(plan: SessionPlan, dir: &Path, gateway: Arc<Gateway>, timestamps: bool) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        RunManifest::new(&plan, LOG_FILE, timestamps).write(&dir.join(MANIFEST_FILE))?;
        let log = JsonlSink::create(dir.join(LOG_FILE))?;
        let mut s = LiveSession {
            plan,
            dir: dir.to_path_buf(),
            gateway,
            timestamps,
            log,
            index: 0,
            engine: None,
            closing: None,
            phase: Phase::AwaitingChoices,
            expired: false,
            matches_done: 0,
            last_activity: Instant::now(),
        };
        s.open_match()?;
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.plan.session_id
    }

    pub fn plan(&self) -> &SessionPlan {
        &self.plan
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn idle_for(&self, now: Instant) -> Duration {
        now.saturating_duration_since(self.last_activity)
    }

    fn open_match(&mut self) -> Result<()> {
        let setup = self.plan.match_setup(self.index, self.timestamps);
        self.engine = Some(MatchEngine::new(setup)?);
        self.closing = None;
        self.phase = Phase::AwaitingChoices;
        self.autoplay()
    }

    /// Commits every automated slot of the open round.
    fn autoplay(&mut self) -> Result<()> {
        let engine = self.engine.as_mut().expect("open match");
        for slot in 0..2 {
            if engine.is_finished() {
                break;
            }
            if engine.is_human(slot) || engine.is_committed(slot) {
                continue;
            }
            match engine.decide(slot, Some(&self.gateway)) {
                Ok(action) => engine.commit(slot, action)?,
                Err(Error::ProtocolViolation { attempts, last_reply }) => {
                    tracing::warn!(
                        match_id = engine.setup().match_id(),
                        slot,
                        attempts,
                        "no parsable choice; aborting match"
                    );
                    engine.abort(
                        Termination::ProtocolViolation,
                        format!(
                            "slot {slot}: no parsable choice after {attempts} attempts; last reply: {last_reply:?}"
                        ),
                    );
                }
                // a dead endpoint must not leave the human waiting forever
                Err(e) => {
                    tracing::warn!(match_id = engine.setup().match_id(), slot, error = %e, "automated slot failed; aborting match");
                    engine.abort(Termination::ProtocolViolation, format!("slot {slot}: {e}"));
                }
            }
        }
        if engine.is_finished() {
            self.close_match()?;
        }
        Ok(())
    }

    /// Logs the finished match and moves to the reveal or final phase.
    fn close_match(&mut self) -> Result<()> {
        let engine = self.engine.take().expect("open match");
        let views = [engine.view(0), engine.view(1)];
        let setup = engine.setup();
        let (match_id, treatment) = (setup.match_id().to_string(), setup.planned.treatment.clone());
        let output = engine.into_output();
        for event in match_events(&output) {
            self.log.append(&self.plan.session_id, &match_id, event)?;
        }
        self.log.flush()?;
        self.matches_done += 1;
        self.closing = Some((match_id, treatment, views));
        self.phase = if self.index + 1 < self.plan.matches.len() && !self.expired {
            Phase::RevealingFeedback
        } else {
            Phase::Finished
        };
        Ok(())
    }

    fn check_writable(&self) -> Result<(), Rejection> {
        if self.expired {
            return Err(Rejection::Gone(format!("session `{}` expired", self.id())));
        }
        if self.phase == Phase::Finished {
            return Err(Rejection::Conflict(format!("session `{}` is finished", self.id())));
        }
        Ok(())
    }

    pub fn submit(&mut self, slot: usize, label: &str) -> Result<SubmitOutcome, Rejection> {
        self.check_writable()?;
        if self.phase != Phase::AwaitingChoices {
            return Err(Rejection::Conflict(
                "the match is over; advance to the next match first".into(),
            ));
        }
        if slot > 1 {
            return Err(Rejection::Invalid(format!("slot {slot} does not exist")));
        }
        let engine = self.engine.as_mut().expect("open match");
        if !engine.is_human(slot) {
            return Err(Rejection::Forbidden(format!("slot {slot} is not played by a human")));
        }
        let game = engine.setup().game;
        let action = Action::parse_label(label, game, engine.role(slot)).ok_or_else(|| {
            let view = engine.view(slot);
            Rejection::Invalid(format!(
                "`{label}` is not a valid choice; expected one of {}",
                view.available_actions.join(", ")
            ))
        })?;
        if engine.is_committed(slot) {
            return Err(Rejection::Conflict(format!(
                "slot {slot} already chose in round {}",
                engine.round()
            )));
        }
        engine.commit(slot, action)?;
        self.last_activity = Instant::now();
        let mut outcome = SubmitOutcome {
            accepted: true,
            round_complete: false,
            match_finished: false,
            phase: self.phase,
        };
        if engine.ready() {
            engine.resolve()?;
            outcome.round_complete = true;
            if engine.is_finished() {
                self.close_match()?;
                outcome.match_finished = true;
            } else {
                self.autoplay()?;
                outcome.match_finished = self.engine.is_none();
            }
        }
        outcome.phase = self.phase;
        Ok(outcome)
    }

    /// Starts the next match after a reveal.
    pub fn advance(&mut self) -> Result<Phase, Rejection> {
        self.check_writable()?;
        if self.phase != Phase::RevealingFeedback {
            return Err(Rejection::Conflict("the current match is still running".into()));
        }
        self.index += 1;
        self.last_activity = Instant::now();
        self.open_match()?;
        Ok(self.phase)
    }

    /// Ends the session after inactivity; an open match is logged as
    /// abandoned with the rounds resolved so far.
    pub fn expire(&mut self, idle: Duration) -> Result<()> {
        if self.expired || self.phase == Phase::Finished {
            return Ok(());
        }
        self.expired = true;
        if let Some(engine) = self.engine.as_mut() {
            engine.abort(
                Termination::HumanAbandoned,
                format!("no activity for {} s", idle.as_secs()),
            );
            self.close_match()?;
        }
        self.phase = Phase::Finished;
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        let (match_id, treatment, views, human_slots) = match (&self.engine, &self.closing) {
            (Some(e), _) => {
                let s = e.setup();
                (
                    s.match_id().to_string(),
                    s.planned.treatment.clone(),
                    [e.view(0), e.view(1)],
                    (0..2).filter(|&i| e.is_human(i)).collect::<Vec<_>>(),
                )
            }
            (None, Some((id, t, v))) => {
                let m = &self.plan.matches[self.index];
                let humans = (0..2)
                    .filter(|&i| self.plan.participants[m.slots[i]].agent.is_human())
                    .collect();
                (id.clone(), t.clone(), v.clone(), humans)
            }
            (None, None) => unreachable!("a session always has an open or a closed match"),
        };
        let round = views[0].round;
        let slots = human_slots
            .iter()
            .map(|&i| {
                let state = SlotState {
                    session_id: self.plan.session_id.clone(),
                    phase: self.phase,
                    expired: self.expired,
                    match_index: self.index,
                    matches: self.plan.matches.len(),
                    match_id: match_id.clone(),
                    treatment: treatment.clone(),
                    view: views[i].clone(),
                };
                (i, state)
            })
            .collect();
        Snapshot {
            summary: Some(SessionSummary {
                session_id: self.plan.session_id.clone(),
                game: self.plan.game,
                phase: self.phase,
                expired: self.expired,
                matches: self.plan.matches.len(),
                matches_done: self.matches_done,
                match_id: Some(match_id),
                round,
                human_slots,
            }),
            slots,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gamelab_core::persistence::{Log, LogFilter};

    fn rps_vs(opponent: &str, rounds: usize) -> CreateSession {
        CreateSession {
            opponent: Some(AgentRef::Name(opponent.into())),
            rounds: Some(rounds),
            ..Default::default()
        }
    }

    fn start(req: CreateSession, dir: &Path) -> LiveSession {
        let plan = req.into_plan("t1".into()).unwrap();
        LiveSession::start(plan, dir, Arc::new(Gateway::new(1)), false).unwrap()
    }

    #[test]
    fn short_form_plans() {
        let plan = rps_vs("wslu", 5).into_plan("s".into()).unwrap();
        assert_eq!(plan.matches.len(), 1);
        assert_eq!(plan.participants[0].id, "human");
        assert_eq!(plan.participants[1].id, "wslu");
        let pd = CreateSession {
            game: Some(Game::Pd),
            opponent: Some(AgentRef::Name("titfortat".into())),
            human_slot: Some(1),
            treatments: Some(vec!["delta=0.75".into(), "H=2".into()]),
            repetitions: Some(2),
            ..Default::default()
        }
        .into_plan("p".into())
        .unwrap();
        assert_eq!(pd.matches.len(), 4);
        assert_eq!(pd.participants[1].group, Some(Role::Blue));
        assert!(pd.participants[1].agent.is_human());
        assert_eq!(pd.matches[2].treatment.as_deref(), Some("H=2"));
    }

    #[test]
    fn plans_without_humans_are_rejected() {
        let mut plan = rps_vs("wslu", 5).into_plan("s".into()).unwrap();
        plan.participants[0].agent = gamelab_core::agents::builtin("wdls").unwrap();
        let req = CreateSession {
            plan: Some(plan),
            ..Default::default()
        };
        let err = req.into_plan("s".into()).unwrap_err().to_string();
        assert!(err.contains("no human"), "{err}");
        assert!(CreateSession::default().into_plan("s".into()).is_err());
    }

    #[test]
    fn a_match_against_a_bot_logs_like_the_runner() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = start(rps_vs("wslu", 3), dir.path());
        for round in 1..=3 {
            let out = s.submit(0, "paper").unwrap();
            assert!(out.round_complete);
            assert_eq!(out.match_finished, round == 3);
            if round < 3 {
                assert!(matches!(s.submit(1, "rock"), Err(Rejection::Forbidden(_))));
            }
        }
        assert_eq!(s.phase(), Phase::Finished);
        assert!(matches!(s.submit(0, "rock"), Err(Rejection::Conflict(_))));
        let log = Log::load(s.log_path(), &LogFilter::default()).unwrap();
        assert_eq!(log.rounds.len(), 3);
        assert!(log.rounds.iter().all(|r| r.actions[0] == Action::Paper));
        assert_eq!(log.ends.len(), 1);
    }

    #[test]
    fn duplicates_and_bad_labels_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let req = CreateSession {
            opponent: Some(AgentRef::Name("human".into())),
            rounds: Some(2),
            ..Default::default()
        };
        let mut s = start(req, dir.path());
        assert!(matches!(s.submit(0, "Lizard"), Err(Rejection::Invalid(_))));
        let before = s.snapshot().slots[&1].clone();
        let first = s.submit(0, "Rock").unwrap();
        assert!(!first.round_complete);
        assert!(matches!(s.submit(0, "Paper"), Err(Rejection::Conflict(_))));
        // the other human has not chosen, so slot 1 sees nothing of slot 0's move
        assert_eq!(s.snapshot().slots[&1], before);
        assert!(s.submit(1, "Scissors").unwrap().round_complete);
    }

    #[test]
    fn reveal_between_matches_and_expiry() {
        let dir = tempfile::tempdir().unwrap();
        let req = CreateSession {
            repetitions: Some(2),
            ..rps_vs("wdls", 1)
        };
        let mut s = start(req, dir.path());
        assert!(s.submit(0, "Rock").unwrap().match_finished);
        assert_eq!(s.phase(), Phase::RevealingFeedback);
        assert!(matches!(s.submit(0, "Rock"), Err(Rejection::Conflict(_))));
        assert_eq!(s.snapshot().slots[&0].view.own_history, vec![Action::Rock]);
        assert_eq!(s.advance().unwrap(), Phase::AwaitingChoices);
        s.expire(Duration::from_secs(60)).unwrap();
        assert!(matches!(s.submit(0, "Rock"), Err(Rejection::Gone(_))));
        let log = Log::load(s.log_path(), &LogFilter::default()).unwrap();
        let ends: Vec<_> = log.ends.values().collect();
        assert_eq!(ends.len(), 2);
        assert_eq!(ends[1].termination, Termination::HumanAbandoned);
        assert!(ends[1].aborted);
        assert_eq!(ends[1].rounds, 0);
    }
}
