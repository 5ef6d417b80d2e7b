//! Round-by-round match execution.
//!
//! A round is: every slot decides from history through the previous round,
//! every slot commits, the round resolves, feedback goes out, and the
//! continuation rule is applied. Nothing about a slot's current choice is
//! visible to the other slot until the round resolves.

use serde::{Deserialize, Serialize};

use crate::agents::{policy_step, AgentKind, AgentState};
use crate::error::{Error, Result};
use crate::game::{Action, Game, Role};
use crate::gateway::prompt::{self, RpsFeedback};
use crate::gateway::{ChatMessage, ChatTranscript, Gateway};
use crate::matrix::{resolve_round, PayoffMatrix};
use crate::protocol::{
    sample_continuation, Continuation, ContinuationRule, DrawStream, MatchEnd, MatchStart, Participant, PlannedMatch,
    RoundRecord, SessionPlan, Termination, NATURE_SLOT,
};

/// Everything needed to run one planned match on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSetup {
    pub session_id: String,
    pub game: Game,
    pub matrix: PayoffMatrix,
    pub planned: PlannedMatch,
    pub participants: [Participant; 2],
    pub master_seed: u64,
    /// Treatment parts announced in the PD system message.
    pub parts: usize,
    pub matches_in_part: usize,
    pub timestamps: bool,
}

impl SessionPlan {
    pub fn match_setup(&self, index: usize, timestamps: bool) -> MatchSetup {
        let planned = self.matches[index].clone();
        let [a, b] = planned.slots;
        MatchSetup {
            session_id: self.session_id.clone(),
            game: self.game,
            matrix: self.matrix.clone(),
            participants: [self.participants[a].clone(), self.participants[b].clone()],
            planned,
            master_seed: self.master_seed,
            parts: self.parts(),
            matches_in_part: self.matches_per_part.max(1),
            timestamps,
        }
    }
}

impl MatchSetup {
    pub fn match_id(&self) -> &str {
        &self.planned.match_id
    }

    pub fn conversation_id(&self, slot: usize) -> String {
        format!("{}/{}/{}", self.session_id, self.planned.match_id, slot)
    }

    pub fn match_start(&self) -> MatchStart {
        MatchStart {
            agent_ids: self.participants.clone().map(|p| p.id),
            agent_names: self.participants.clone().map(|p| p.agent.name),
            rule: self.planned.rule,
            treatment: self.planned.treatment.clone(),
            part: self.planned.part,
            repetition: self.planned.repetition,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EngineStatus {
    AwaitingChoices,
    Finished { termination: Termination },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub match_id: String,
    pub treatment: Option<String>,
    pub rounds: Vec<RoundRecord>,
    pub termination: Termination,
    pub final_totals: (f64, f64),
    pub detail: Option<String>,
}

impl MatchResult {
    pub fn aborted(&self) -> bool {
        self.termination.is_aborted()
    }
}

#[derive(Clone, Debug)]
pub struct MatchOutput {
    pub start: MatchStart,
    pub result: MatchResult,
    pub end: MatchEnd,
    /// One per model-backed or human slot, ordered by slot.
    pub transcripts: Vec<(usize, ChatTranscript)>,
}

/// What one slot may see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotView {
    pub slot: usize,
    pub game: Game,
    pub role: Option<Role>,
    pub agent_id: String,
    pub opponent_id: String,
    /// Round currently being decided (or the last round once finished).
    pub round: usize,
    pub own_history: Vec<Action>,
    pub opponent_history: Vec<Action>,
    #[serde(with = "crate::points::pair")]
    pub totals: (f64, f64),
    pub awaiting_choice: bool,
    pub committed: bool,
    pub available_actions: Vec<String>,
    /// Instructions, decision prompts, feedback and continuation notices
    /// shown to this slot, oldest first.
    pub messages: Vec<String>,
    pub status: EngineStatus,
}

pub struct MatchEngine {
    setup: MatchSetup,
    states: [AgentState; 2],
    streams: [DrawStream; 2],
    nature: DrawStream,
    draws: [f64; 2],
    pending: [Option<Action>; 2],
    transcripts: [Option<ChatTranscript>; 2],
    records: Vec<RoundRecord>,
    keep_records: bool,
    round: usize,
    last_face: Option<u8>,
    totals: (f64, f64),
    status: EngineStatus,
    detail: Option<String>,
}

fn now_stamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl MatchEngine {
    pub fn new(setup: MatchSetup) -> Result<Self> {
        setup.planned.rule.validate()?;
        for p in &setup.participants {
            p.agent.validate(Some(setup.game))?;
        }
        let mid = setup.planned.match_id.clone();
        let stream = |slot: u32| DrawStream::new(setup.master_seed, &setup.session_id, &mid, slot);
        let streams = [stream(0), stream(1)];
        let nature = stream(NATURE_SLOT);
        let transcripts = [0, 1].map(|slot| {
            let p = &setup.participants[slot];
            let kind = &p.agent.kind;
            matches!(kind, AgentKind::Llm { .. } | AgentKind::Human).then(|| {
                let mut t = ChatTranscript::new(setup.conversation_id(slot));
                match setup.game {
                    Game::Rps => t.push(ChatMessage::system(prompt::rps_system())),
                    Game::Pd => {
                        let role = Role::for_slot(slot);
                        t.push(ChatMessage::system(prompt::pd_system(role, &setup.matrix, setup.parts)));
                        t.push(ChatMessage::user(prompt::pd_intro(
                            &setup.planned.rule,
                            setup.planned.part,
                            setup.matches_in_part,
                        )));
                    }
                }
                t
            })
        });
        let game = setup.game;
        let mut engine = MatchEngine {
            setup,
            states: [AgentState::new(game), AgentState::new(game)],
            streams,
            nature,
            draws: [0.0; 2],
            pending: [None; 2],
            transcripts,
            records: Vec::new(),
            keep_records: true,
            round: 1,
            last_face: None,
            totals: (0.0, 0.0),
            status: EngineStatus::AwaitingChoices,
            detail: None,
        };
        engine.open_round();
        Ok(engine)
    }

    /// Drops round records after resolution; totals and histories are kept.
    /// For very long simulations.
    pub fn set_keep_records(&mut self, keep: bool) {
        self.keep_records = keep;
    }

    pub fn setup(&self) -> &MatchSetup {
        &self.setup
    }

    pub fn status(&self) -> EngineStatus {
        self.status
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.status, EngineStatus::Finished { .. })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn totals(&self) -> (f64, f64) {
        self.totals
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn is_committed(&self, slot: usize) -> bool {
        self.pending[slot].is_some()
    }

    pub fn transcript(&self, slot: usize) -> Option<&ChatTranscript> {
        self.transcripts[slot].as_ref()
    }

    pub fn role(&self, slot: usize) -> Option<Role> {
        (self.setup.game == Game::Pd).then(|| Role::for_slot(slot))
    }

    /// True for slots whose decision comes from outside the engine.
    pub fn is_human(&self, slot: usize) -> bool {
        self.setup.participants[slot].agent.is_human()
    }

    fn open_round(&mut self) {
        // one draw per slot per round, used or not, keeps streams aligned
        for slot in 0..2 {
            self.draws[slot] = self.streams[slot].next_draw();
            self.states[slot].rng_cursor = self.streams[slot].used();
        }
        self.pending = [None; 2];
        for slot in 0..2 {
            if self.is_human(slot) {
                let text = self.decision_prompt(slot);
                if let Some(t) = self.transcripts[slot].as_mut() {
                    t.push(ChatMessage::user(text));
                }
            }
        }
    }

    /// Decision message for the current round.
    pub fn decision_prompt(&self, slot: usize) -> String {
        match self.setup.game {
            Game::Rps => prompt::rps_decision(self.round),
            Game::Pd => {
                let role = Role::for_slot(slot);
                if self.round == 1 {
                    prompt::pd_new_match(&self.setup.planned.rule, role)
                } else {
                    let face = match self.setup.planned.rule {
                        ContinuationRule::Dice { .. } => self.last_face,
                        ContinuationRule::Finite { .. } => None,
                    };
                    prompt::pd_continue(face, self.round, role)
                }
            }
        }
    }

    /// Produces the decision of an automated slot. Model-backed slots go
    /// through `gateway`.
    pub fn decide(&mut self, slot: usize, gateway: Option<&Gateway>) -> Result<Action> {
        self.ensure_open()?;
        let spec = &self.setup.participants[slot].agent;
        match &spec.kind {
            AgentKind::Llm { endpoint } => {
                let gateway =
                    gateway.ok_or_else(|| Error::Protocol(format!("agent `{}` needs a gateway", spec.name)))?;
                let decision = self.decision_prompt(slot);
                let game = self.setup.game;
                let role = Role::for_slot(slot);
                let transcript = self.transcripts[slot]
                    .as_mut()
                    .expect("model-backed slots have a transcript");
                let (_, action) = gateway.complete(endpoint, transcript, &decision, game, role)?;
                Ok(action)
            }
            _ => policy_step(spec, &self.states[slot], self.draws[slot]),
        }
    }

    fn ensure_open(&self) -> Result<()> {
        match self.status {
            EngineStatus::AwaitingChoices => Ok(()),
            EngineStatus::Finished { termination } => Err(Error::Protocol(format!(
                "match {} already finished ({termination:?})",
                self.setup.planned.match_id
            ))),
        }
    }

    /// Commits a slot's choice for the current round. Choices are final.
    pub fn commit(&mut self, slot: usize, action: Action) -> Result<()> {
        self.ensure_open()?;
        if slot > 1 {
            return Err(Error::Validation(format!("slot {slot} does not exist")));
        }
        if action.game() != self.setup.game {
            return Err(Error::Validation(format!(
                "{action} is not a {} action",
                self.setup.game
            )));
        }
        if self.pending[slot].is_some() {
            return Err(Error::Validation(format!(
                "slot {slot} already committed a choice for round {}",
                self.round
            )));
        }
        self.pending[slot] = Some(action);
        Ok(())
    }

    pub fn ready(&self) -> bool {
        self.pending.iter().all(Option::is_some)
    }

    /// Resolves the current round once both slots committed.
    pub fn resolve(&mut self) -> Result<RoundRecord> {
        self.ensure_open()?;
        let (Some(a0), Some(a1)) = (self.pending[0], self.pending[1]) else {
            return Err(Error::Protocol(format!("round {} has uncommitted slots", self.round)));
        };
        let res = resolve_round(&self.setup.matrix, a0, a1)?;
        let outcomes = [res.outcome, res.outcome.complement()];
        let (p0, p1) = res.payoffs;
        self.states[0].record(a0, a1, outcomes[0], p0);
        self.states[1].record(a1, a0, outcomes[1], p1);
        self.totals = (self.totals.0 + p0, self.totals.1 + p1);

        let rule = self.setup.planned.rule;
        let (continues, face, termination) = match rule {
            ContinuationRule::Finite { horizon } => (self.round < horizon, None, Termination::HorizonReached),
            ContinuationRule::Dice { .. } => {
                let draw = self.nature.next_draw();
                let c = sample_continuation(&rule, self.round, draw)?;
                (c.decision == Continuation::Continue, c.die_face, Termination::DiceEnded)
            }
        };
        self.last_face = face;

        let record = RoundRecord {
            session_id: self.setup.session_id.clone(),
            match_id: self.setup.planned.match_id.clone(),
            round_index: self.round,
            agent_ids: self.setup.participants.clone().map(|p| p.id),
            actions: [a0, a1],
            payoffs: (p0, p1),
            outcomes,
            treatment: self.setup.planned.treatment.clone(),
            die_face: face,
            continues,
            timestamp: self.setup.timestamps.then(now_stamp),
        };
        self.send_feedback(continues, face, [p0, p1]);
        if self.keep_records {
            self.records.push(record.clone());
        }
        if continues {
            self.round += 1;
            self.open_round();
        } else {
            self.status = EngineStatus::Finished { termination };
        }
        Ok(record)
    }

    fn send_feedback(&mut self, continues: bool, face: Option<u8>, payoffs: [f64; 2]) {
        let totals = [self.totals.0, self.totals.1];
        for slot in 0..2 {
            let Some(t) = self.transcripts[slot].as_mut() else {
                continue;
            };
            let me = &self.states[slot];
            let (own_total, opp_total) = (totals[slot], totals[1 - slot]);
            match self.setup.game {
                Game::Rps => {
                    let i = me.rounds() - 1;
                    let own = me.own_history[i];
                    let opp = me.opponent_history[i];
                    t.push(ChatMessage::user(prompt::rps_feedback(&RpsFeedback {
                        outcome: me.outcome_history[i],
                        own,
                        opp,
                        pay: payoffs[slot],
                        opp_pay: payoffs[1 - slot],
                        total: own_total,
                        opp_total,
                    })));
                }
                Game::Pd => {
                    let role = Role::for_slot(slot);
                    t.push(ChatMessage::user(prompt::pd_feedback(
                        role,
                        &me.own_history,
                        &me.opponent_history,
                        own_total,
                        opp_total,
                    )));
                    if !continues {
                        t.push(ChatMessage::user(prompt::pd_end(
                            &self.setup.planned.rule,
                            face,
                            own_total,
                        )));
                    }
                }
            }
        }
    }

    /// Ends the match early; resolved rounds are kept.
    pub fn abort(&mut self, termination: Termination, detail: impl Into<String>) {
        if !self.is_finished() {
            self.status = EngineStatus::Finished { termination };
            self.detail = Some(detail.into());
        }
    }

    pub fn view(&self, slot: usize) -> SlotView {
        let state = &self.states[slot];
        let t = self.totals;
        let totals = if slot == 0 { t } else { (t.1, t.0) };
        let awaiting = !self.is_finished() && self.pending[slot].is_none();
        let role = self.role(slot);
        SlotView {
            slot,
            game: self.setup.game,
            role,
            agent_id: self.setup.participants[slot].id.clone(),
            opponent_id: self.setup.participants[1 - slot].id.clone(),
            round: self.round,
            own_history: state.own_history.clone(),
            opponent_history: state.opponent_history.clone(),
            totals,
            awaiting_choice: awaiting,
            committed: self.pending[slot].is_some(),
            available_actions: if awaiting {
                self.setup
                    .game
                    .actions()
                    .iter()
                    .map(|a| match role {
                        Some(r) => a.display_name(r).to_string(),
                        None => a.label().to_string(),
                    })
                    .collect()
            } else {
                Vec::new()
            },
            messages: self.transcripts[slot]
                .as_ref()
                .map(|t| t.messages.iter().map(|m| m.text.clone()).collect())
                .unwrap_or_default(),
            status: self.status,
        }
    }

    pub fn match_end(&self) -> MatchEnd {
        let termination = match self.status {
            EngineStatus::Finished { termination } => termination,
            EngineStatus::AwaitingChoices => Termination::HumanAbandoned,
        };
        MatchEnd {
            termination,
            rounds: self.states[0].rounds(),
            final_totals: self.totals,
            aborted: termination.is_aborted(),
            treatment: self.setup.planned.treatment.clone(),
            detail: self.detail.clone(),
        }
    }

    pub fn into_output(self) -> MatchOutput {
        let end = self.match_end();
        let start = self.setup.match_start();
        let result = MatchResult {
            match_id: self.setup.planned.match_id.clone(),
            treatment: self.setup.planned.treatment.clone(),
            rounds: self.records,
            termination: end.termination,
            final_totals: self.totals,
            detail: self.detail,
        };
        let transcripts = self
            .transcripts
            .into_iter()
            .enumerate()
            .filter_map(|(slot, t)| t.map(|t| (slot, t)))
            .collect();
        MatchOutput {
            start,
            result,
            end,
            transcripts,
        }
    }
}

/// Runs an automated match to completion. A model that never produces a
/// parsable reply ends the match as `ProtocolViolation`, keeping the rounds
/// resolved so far.
pub fn run_match(setup: MatchSetup, gateway: Option<&Gateway>) -> Result<MatchOutput> {
    if let Some(p) = setup.participants.iter().find(|p| p.agent.is_human()) {
        return Err(Error::Protocol(format!(
            "participant `{}` is human; serve this match through the session service",
            p.id
        )));
    }
    let mut engine = MatchEngine::new(setup)?;
    run_engine(&mut engine, gateway)?;
    Ok(engine.into_output())
}

pub(crate) fn run_engine(engine: &mut MatchEngine, gateway: Option<&Gateway>) -> Result<()> {
    'rounds: while !engine.is_finished() {
        for slot in 0..2 {
            match engine.decide(slot, gateway) {
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
                    break 'rounds;
                }
                Err(e) => return Err(e),
            }
        }
        engine.resolve()?;
    }
    Ok(())
}
