//! Prompt templates shown to model-backed and human participants.
//!
//! Templates use `{slot}` placeholders. Rendering fails with
//! [`Error::MissingBinding`] when a slot has no value, so a rendered prompt
//! never contains an unreplaced marker.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::game::{Action, Game, Outcome, Role};
use crate::matrix::PayoffMatrix;
use crate::protocol::ContinuationRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    System,
    Decision,
    Feedback,
    DiceIntro,
    FiniteIntro,
    DiceRules,
    DiceRulesSingleRound,
    DiceRulesGeneral,
    NewMatch,
    DiceContinue,
    RoundContinue,
    DiceEnd,
    MatchEnd,
    FormatReminder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub game: Game,
    pub part: Part,
}

macro_rules! pd_intro_head {
    () => {
        "We will begin the {part} part now. This {part} part will consist of {matches} matches. In each match every Red participant is paired with a Blue participant. You will not be paired twice with the same participant during the session or with a participant that was paired with someone that was paired with you or with someone that was paired with someone that was paired with someone that was paired with you, and so on. Thus, the pairing is done in such a way that the decisions you make in one match cannot affect the decisions of the participants you will be paired with in later matches or later parts of the session.\n"
    };
}

macro_rules! pd_intro_tail {
    () => {
        "\nYou will now participate in {matches} matches, each match paired with a different participant. In each match you will interact with the same person {duration}. Remember: your decisions in one match cannot affect the decisions of the people you will interact with in future matches. This is not a practice; you will be paid!\nIf you are a Red participant you can choose the actions in  red, U or D, and if you are a Blue participant you can press the actions in Blue, L or R."
    };
}

macro_rules! pd_choice_footer {
    () => {
        "Make your choices now.\nThink before you make your choice.\nOutput with the following format:\nReason: Your reason for the choice\nChoice: {choices}"
    };
}

macro_rules! round_continue {
    () => {
        concat!(
            "Now you are in Round {round} of the same match. You are still interacting with the same participant. You can see in the history the result of the previous rounds. ",
            pd_choice_footer!()
        )
    };
}

const RPS_SYSTEM: &str = "Rock-Paper-Scissors
You have been randomly paired with a computer algorithm (i.e., opponent) to play the Rock-Paper-Scissors game. You and your opponent will make decisions at the same time across multiple trials. In each trial, each of you will have to simultaneously select one of three options: Rock, Paper, or Scissors. The outcome of a trial (Lose, Win, or Tie) will depend on the decisions that both you and your opponent make according to these basic rules of the game:
\u{2013} Rock beats Scissors
\u{2013} Scissors beats Paper
\u{2013} Paper beats Rock
Your payoff in a given trial will depend on the decisions that both you and your opponent make. **Beating the opponent brings you more points than tying (choosing the same option as the opponent), which brings you more points than if you get beaten by your opponent**. The exact payoffs for all possible outcomes are fixed throughout the game. After each trial, information will be provided to both you and your opponent about what both of you did and what were the corresponding payoffs in the previous trial.
Your payment will be given according to **the sum of points that you accumulate across all trials, as advertised, plus a base payment for successful completion of the study.**";

const RPS_DECISION: &str = "Trial {trial}
Please make a choice: Rock, Paper, or Scissors. Think before you make your choice.
Output with the following format:
Reason: [Your reason for the choice]
Choice: [Rock/Paper/Scissors]";

const RPS_FEEDBACK: &str = "Feedback in the previous trial:
You {outcome}!
You chose {own}, your opponent chose {opp}.
Your payoff was {pay}, your opponent's payoff was {opp_pay}.
Your total payoff so far is {total}. Your opponent's total payoff so far is {opp_total}.";

const RPS_REMINDER: &str =
    "Your previous reply did not follow the required format. Answer again and end with a line of the form:
Choice: [Rock/Paper/Scissors]";

const PD_SYSTEM: &str = "You are an UCLA undergraduate recruited for a research project.
The session you are participating in is broken down into {parts} separate parts. At the end of  the last part, you will be paid the total amount you have accumulated during the course of the {parts} parts in addition to the show-up fee.
Your dollar earnings at the end of the session are determined by the points/$ exchange rate posted on the board in the  front and back of the room. This exchange rate is equal to 200 points/$. Therefore, 200 points are equivalent to $1.
The participants are divided in two groups: Red and Blue.
Red and Blue participants will be matched together to interact in the following way. The Red participant can choose between U or D and the Blue participant can choose between L and R.
If the Red participant chooses U and the Blue participant chooses L, both earn {reward} points.
If the Red participant chooses U and the Blue participant chooses R, the Red participant earns {sucker} and the Blue participant earns {temptation} points.
If the Red participant chooses D and the Blue participant chooses L, the Red participant earns {temptation} and the Blue participant earns {sucker} points.
If the Red participant chooses D and the Blue participant chooses R, both earn {punishment} points.
The points of the Red participants are indicated on the screen in red, and the Blue participant points are indicated in blue.
We will show the result of previous rounds of the current match.
Remember that you are a {role} participant.";

const PD_DICE_INTRO: &str = concat!(pd_intro_head!(), "{rules}", pd_intro_tail!());

const PD_FINITE_INTRO: &str = concat!(
    pd_intro_head!(),
    "In this part, each match will last exactly {horizon_rounds}. The number of rounds is the same for every match of this part. After the last round, the match ends and participants are re-matched to interact with other participants. Therefore you will interact for {horizon_rounds}, with {matches} different participants.",
    pd_intro_tail!()
);

const PD_DICE_RULES: &str = "In this part, after each round we will roll a four sided dice. If {continue_faces} appear, the participants will interact again without changing pairs. If {end_faces} appears, the match ends and participants are re-matched to interact with other participants. Therefore, in this part, each pair will interact {duration}. After that, a new match will start with different pairs. Therefore you will interact {duration}, with {matches} different participants.";

const PD_DICE_RULES_SINGLE: &str = "In this part, each match will last a single round. After that round, the match ends and participants are re-matched to interact with other participants. Therefore you will interact for a single round, with {matches} different participants.";

const PD_DICE_RULES_GENERAL: &str = "In this part, after each round the computer will make a random draw. With probability {percent}% the participants will interact again without changing pairs. Otherwise, the match ends and participants are re-matched to interact with other participants. Therefore, in this part, each pair will interact {duration}. After that, a new match will start with different pairs. Therefore you will interact {duration}, with {matches} different participants.";

const PD_NEW_MATCH: &str = concat!(
    "You are now matched with a new participant. You will interact with this participant {duration}. ",
    pd_choice_footer!()
);

const PD_FEEDBACK: &str = "Feedback in the previous rounds:
Your choices: {own_choices}
Opponent choices: {opp_choices}
Your total payoff: {total}
Opponent total payoff: {opp_total}";

const PD_DICE_CONTINUE: &str = concat!("A {face} appeared therefore this match continues. ", round_continue!());

const PD_ROUND_CONTINUE: &str = round_continue!();

const PD_DICE_END: &str = "A {face} appeared therefore this match ended. You have earned {points} points. Now you will be matched with the next participant.";

const PD_MATCH_END: &str =
    "This match ended. You have earned {points} points. Now you will be matched with the next participant.";

const PD_REMINDER: &str =
    "Your previous reply did not follow the required format. Answer again and end with a line of the form:
Choice: {choices}";

impl PromptTemplate {
    pub fn new(game: Game, part: Part) -> Self {
        PromptTemplate { game, part }
    }

    pub fn text(&self) -> Result<&'static str> {
        let text = match (self.game, self.part) {
            (Game::Rps, Part::System) => RPS_SYSTEM,
            (Game::Rps, Part::Decision) => RPS_DECISION,
            (Game::Rps, Part::Feedback) => RPS_FEEDBACK,
            (Game::Rps, Part::FormatReminder) => RPS_REMINDER,
            (Game::Pd, Part::System) => PD_SYSTEM,
            (Game::Pd, Part::DiceIntro) => PD_DICE_INTRO,
            (Game::Pd, Part::FiniteIntro) => PD_FINITE_INTRO,
            (Game::Pd, Part::DiceRules) => PD_DICE_RULES,
            (Game::Pd, Part::DiceRulesSingleRound) => PD_DICE_RULES_SINGLE,
            (Game::Pd, Part::DiceRulesGeneral) => PD_DICE_RULES_GENERAL,
            (Game::Pd, Part::NewMatch) => PD_NEW_MATCH,
            (Game::Pd, Part::Feedback) => PD_FEEDBACK,
            (Game::Pd, Part::DiceContinue) => PD_DICE_CONTINUE,
            (Game::Pd, Part::RoundContinue) => PD_ROUND_CONTINUE,
            (Game::Pd, Part::DiceEnd) => PD_DICE_END,
            (Game::Pd, Part::MatchEnd) => PD_MATCH_END,
            (Game::Pd, Part::FormatReminder) => PD_REMINDER,
            (game, part) => return Err(Error::Validation(format!("no {part:?} template for {game}"))),
        };
        Ok(text)
    }

    /// Placeholder names in order of first appearance.
    pub fn slots(&self) -> Result<Vec<String>> {
        let mut out: Vec<String> = Vec::new();
        for slot in scan_placeholders(self.text()?) {
            if !out.contains(&slot) {
                out.push(slot);
            }
        }
        Ok(out)
    }

    pub fn all() -> Vec<PromptTemplate> {
        use Part::*;
        let rps = [System, Decision, Feedback, FormatReminder];
        let pd = [
            System,
            DiceIntro,
            FiniteIntro,
            DiceRules,
            DiceRulesSingleRound,
            DiceRulesGeneral,
            NewMatch,
            Feedback,
            DiceContinue,
            RoundContinue,
            DiceEnd,
            MatchEnd,
            FormatReminder,
        ];
        rps.iter()
            .map(|p| PromptTemplate::new(Game::Rps, *p))
            .chain(pd.iter().map(|p| PromptTemplate::new(Game::Pd, *p)))
            .collect()
    }
}

pub type Bindings = BTreeMap<String, String>;

/// Builds a binding map from `(slot, value)` pairs.
pub fn bindings<K: Into<String>, V: ToString>(pairs: impl IntoIterator<Item = (K, V)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.into(), v.to_string())).collect()
}

/// Names of `{identifier}` markers in `text`.
pub fn scan_placeholders(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if end > 0 && after[..end].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                out.push(after[..end].to_string());
                rest = &after[end + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

fn substitute(text: &str, values: &Bindings) -> Result<String> {
    let mut out = String::with_capacity(text.len() + 64);
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .filter(|end| *end > 0 && after[..*end].chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
        match end {
            Some(end) => {
                let slot = &after[..end];
                let value = values
                    .get(slot)
                    .ok_or_else(|| Error::MissingBinding { slot: slot.to_string() })?;
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_prompt(t: PromptTemplate, values: &Bindings) -> Result<String> {
    substitute(t.text()?, values)
}

// ---------------------------------------------------------------------------
// Protocol-level helpers. These pick the right part and bindings for each
// moment of a match, and are shared by the model driver and the live session
// service so both kinds of participant see identical text.

fn choices_hint(role: Role) -> &'static str {
    match role {
        Role::Red => "U/D",
        Role::Blue => "L/R",
    }
}

pub fn rps_system() -> String {
    RPS_SYSTEM.to_string()
}

pub fn rps_decision(trial: usize) -> String {
    render_prompt(
        PromptTemplate::new(Game::Rps, Part::Decision),
        &bindings([("trial", trial)]),
    )
    .expect("decision bindings complete")
}

pub struct RpsFeedback {
    pub outcome: Outcome,
    pub own: Action,
    pub opp: Action,
    pub pay: f64,
    pub opp_pay: f64,
    pub total: f64,
    pub opp_total: f64,
}

pub fn outcome_word(outcome: Outcome) -> &'static str {
    match outcome {
        Outcome::Win => "won",
        Outcome::Tie => "tied",
        Outcome::Lose => "lost",
    }
}

pub fn rps_feedback(f: &RpsFeedback) -> String {
    let p = crate::fmt_points;
    render_prompt(
        PromptTemplate::new(Game::Rps, Part::Feedback),
        &bindings([
            ("outcome", outcome_word(f.outcome).to_string()),
            ("own", f.own.label().to_string()),
            ("opp", f.opp.label().to_string()),
            ("pay", p(f.pay)),
            ("opp_pay", p(f.opp_pay)),
            ("total", p(f.total)),
            ("opp_total", p(f.opp_total)),
        ]),
    )
    .expect("feedback bindings complete")
}

pub fn pd_system(role: Role, matrix: &PayoffMatrix, parts: usize) -> String {
    let p = crate::fmt_points;
    render_prompt(
        PromptTemplate::new(Game::Pd, Part::System),
        &bindings([
            ("parts", parts.to_string()),
            ("reward", p(matrix.row_payoff(0, 0))),
            ("sucker", p(matrix.row_payoff(0, 1))),
            ("temptation", p(matrix.row_payoff(1, 0))),
            ("punishment", p(matrix.row_payoff(1, 1))),
            ("role", role.name().to_string()),
        ]),
    )
    .expect("system bindings complete")
}

fn ordinal(n: usize) -> String {
    match n {
        1 => "first".into(),
        2 => "second".into(),
        3 => "third".into(),
        4 => "fourth".into(),
        5 => "fifth".into(),
        n => format!("{n}th"),
    }
}

/// Number of die faces (out of four) that continue the match, when `delta`
/// is a multiple of one quarter.
pub fn continuing_faces(delta: f64) -> Option<u8> {
    let k = delta * 4.0;
    (k.fract() == 0.0 && (0.0..4.0).contains(&k)).then_some(k as u8)
}

fn face_list(faces: &[u8]) -> String {
    let names: Vec<String> = faces.iter().map(|f| f.to_string()).collect();
    match names.len() {
        0 => String::new(),
        1 => names[0].clone(),
        n => format!("{} or {}", names[..n - 1].join(", "), names[n - 1]),
    }
}

fn end_event(k: u8) -> String {
    format!("a {}", face_list(&(k + 1..=4).collect::<Vec<_>>()))
}

/// How long a match lasts, phrased for the participant.
pub fn duration_phrase(rule: &ContinuationRule) -> String {
    match *rule {
        ContinuationRule::Finite { horizon } => format!("for {}", rounds_phrase(horizon)),
        ContinuationRule::Dice { delta } => match continuing_faces(delta) {
            Some(0) => "for a single round".into(),
            Some(k) => format!("until {} appears", end_event(k)),
            None => "until the match ends".into(),
        },
    }
}

fn rounds_phrase(n: usize) -> String {
    if n == 1 {
        "1 round".into()
    } else {
        format!("{n} rounds")
    }
}

/// Part instructions shown before the first match of a treatment block.
pub fn pd_intro(rule: &ContinuationRule, part_number: usize, matches: usize) -> String {
    let duration = duration_phrase(rule);
    let mut b = bindings([
        ("part", ordinal(part_number)),
        ("matches", matches.to_string()),
        ("duration", duration.clone()),
    ]);
    let template = match *rule {
        ContinuationRule::Finite { horizon } => {
            b.insert("horizon_rounds".into(), rounds_phrase(horizon));
            Part::FiniteIntro
        }
        ContinuationRule::Dice { delta } => {
            let rules = match continuing_faces(delta) {
                Some(0) => render_prompt(PromptTemplate::new(Game::Pd, Part::DiceRulesSingleRound), &b),
                Some(k) => {
                    let mut rb = b.clone();
                    let faces: Vec<u8> = (1..=k).collect();
                    let cont = if k == 1 {
                        "the number 1".to_string()
                    } else {
                        format!("the numbers {}", face_list(&faces))
                    };
                    rb.insert("continue_faces".into(), cont);
                    rb.insert("end_faces".into(), end_event(k));
                    render_prompt(PromptTemplate::new(Game::Pd, Part::DiceRules), &rb)
                }
                None => {
                    let mut rb = b.clone();
                    rb.insert("percent".into(), format!("{}", delta * 100.0));
                    render_prompt(PromptTemplate::new(Game::Pd, Part::DiceRulesGeneral), &rb)
                }
            }
            .expect("dice rule bindings complete");
            b.insert("rules".into(), rules);
            Part::DiceIntro
        }
    };
    render_prompt(PromptTemplate::new(Game::Pd, template), &b).expect("intro bindings complete")
}

pub fn pd_new_match(rule: &ContinuationRule, role: Role) -> String {
    render_prompt(
        PromptTemplate::new(Game::Pd, Part::NewMatch),
        &bindings([
            ("duration", duration_phrase(rule)),
            ("choices", choices_hint(role).to_string()),
        ]),
    )
    .expect("new-match bindings complete")
}

pub fn pd_feedback(role: Role, own: &[Action], opp: &[Action], total: f64, opp_total: f64) -> String {
    let opp_role = match role {
        Role::Red => Role::Blue,
        Role::Blue => Role::Red,
    };
    let join = |xs: &[Action], r: Role| xs.iter().map(|a| a.display_name(r)).collect::<Vec<_>>().join(", ");
    render_prompt(
        PromptTemplate::new(Game::Pd, Part::Feedback),
        &bindings([
            ("own_choices", join(own, role)),
            ("opp_choices", join(opp, opp_role)),
            ("total", crate::fmt_points(total)),
            ("opp_total", crate::fmt_points(opp_total)),
        ]),
    )
    .expect("feedback bindings complete")
}

/// Decision prompt for round `round` (>= 2) of a PD match.
pub fn pd_continue(face: Option<u8>, round: usize, role: Role) -> String {
    let mut b = bindings([
        ("round", round.to_string()),
        ("choices", choices_hint(role).to_string()),
    ]);
    let part = match face {
        Some(f) => {
            b.insert("face".into(), f.to_string());
            Part::DiceContinue
        }
        None => Part::RoundContinue,
    };
    render_prompt(PromptTemplate::new(Game::Pd, part), &b).expect("continue bindings complete")
}

pub fn pd_end(rule: &ContinuationRule, face: Option<u8>, points: f64) -> String {
    let mut b = bindings([("points", crate::fmt_points(points))]);
    let part = match (rule, face) {
        (ContinuationRule::Dice { .. }, Some(f)) => {
            b.insert("face".into(), f.to_string());
            Part::DiceEnd
        }
        _ => Part::MatchEnd,
    };
    render_prompt(PromptTemplate::new(Game::Pd, part), &b).expect("end bindings complete")
}

pub fn format_reminder(game: Game, role: Role) -> String {
    render_prompt(
        PromptTemplate::new(game, Part::FormatReminder),
        &bindings([("choices", choices_hint(role))]),
    )
    .expect("reminder bindings complete")
}
