//! Stage games, actions and the outcome/transition algebra.
//!
//! Rock-Paper-Scissors uses circular dominance: Rock beats Scissors,
//! Scissors beats Paper, Paper beats Rock. Prisoner's Dilemma actions carry
//! no Win/Lose label; every PD round resolves to [`Outcome::Tie`] so that
//! downstream code can treat both games uniformly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Game {
    Rps,
    Pd,
}

impl Game {
    pub fn actions(self) -> &'static [Action] {
        match self {
            Game::Rps => &[Action::Rock, Action::Paper, Action::Scissors],
            Game::Pd => &[Action::Cooperate, Action::Defect],
        }
    }

    pub fn action_count(self) -> usize {
        self.actions().len()
    }

    pub fn action_at(self, index: usize) -> Result<Action, DomainError> {
        self.actions()
            .get(index)
            .copied()
            .ok_or_else(|| DomainError::new(format!("action index {index} out of range for {self}")))
    }
}

impl fmt::Display for Game {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Game::Rps => "rps",
            Game::Pd => "pd",
        })
    }
}

impl FromStr for Game {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rps" => Ok(Game::Rps),
            "pd" => Ok(Game::Pd),
            other => Err(DomainError::new(format!("unknown game `{other}`"))),
        }
    }
}

/// PD participant group. Red picks rows (U/D), Blue picks columns (L/R).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Red,
    Blue,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Red => "Red",
            Role::Blue => "Blue",
        }
    }

    /// The role occupying a match slot: slot 0 is the row player.
    pub fn for_slot(slot: usize) -> Role {
        if slot == 0 {
            Role::Red
        } else {
            Role::Blue
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Rock,
    Paper,
    Scissors,
    Cooperate,
    Defect,
}

impl Action {
    pub fn game(self) -> Game {
        match self {
            Action::Rock | Action::Paper | Action::Scissors => Game::Rps,
            Action::Cooperate | Action::Defect => Game::Pd,
        }
    }

    /// Row/column index of this action within its game.
    pub fn index(self) -> usize {
        match self {
            Action::Rock | Action::Cooperate => 0,
            Action::Paper | Action::Defect => 1,
            Action::Scissors => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Rock => "Rock",
            Action::Paper => "Paper",
            Action::Scissors => "Scissors",
            Action::Cooperate => "Cooperate",
            Action::Defect => "Defect",
        }
    }

    /// Name shown to a participant. PD actions are role-specific
    /// (Red: U/D, Blue: L/R); RPS actions ignore the role.
    pub fn display_name(self, role: Role) -> &'static str {
        match (self, role) {
            (Action::Cooperate, Role::Red) => "U",
            (Action::Defect, Role::Red) => "D",
            (Action::Cooperate, Role::Blue) => "L",
            (Action::Defect, Role::Blue) => "R",
            (other, _) => other.label(),
        }
    }

    /// The RPS action that beats `self`.
    pub fn beaten_by(self) -> Result<Action, DomainError> {
        match self {
            Action::Rock => Ok(Action::Paper),
            Action::Paper => Ok(Action::Scissors),
            Action::Scissors => Ok(Action::Rock),
            other => Err(DomainError::new(format!("{other} has no dominance relation"))),
        }
    }

    /// The RPS action that `self` beats.
    pub fn beats(self) -> Result<Action, DomainError> {
        match self {
            Action::Rock => Ok(Action::Scissors),
            Action::Paper => Ok(Action::Rock),
            Action::Scissors => Ok(Action::Paper),
            other => Err(DomainError::new(format!("{other} has no dominance relation"))),
        }
    }

    /// Parses a label as a participant would type it. PD accepts the
    /// role-specific letter only when `role` is given.
    pub fn parse_label(text: &str, game: Game, role: Option<Role>) -> Option<Action> {
        let t = text.trim().to_ascii_lowercase();
        match game {
            Game::Rps => match t.as_str() {
                "rock" => Some(Action::Rock),
                "paper" => Some(Action::Paper),
                "scissors" | "scissor" => Some(Action::Scissors),
                _ => None,
            },
            Game::Pd => match (t.as_str(), role) {
                ("u", Some(Role::Red)) | ("l", Some(Role::Blue)) => Some(Action::Cooperate),
                ("d", Some(Role::Red)) | ("r", Some(Role::Blue)) => Some(Action::Defect),
                ("cooperate", _) => Some(Action::Cooperate),
                ("defect", _) => Some(Action::Defect),
                _ => None,
            },
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Win,
    Tie,
    Lose,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Win, Outcome::Tie, Outcome::Lose];

    pub fn index(self) -> usize {
        match self {
            Outcome::Win => 0,
            Outcome::Tie => 1,
            Outcome::Lose => 2,
        }
    }

    pub fn complement(self) -> Outcome {
        match self {
            Outcome::Win => Outcome::Lose,
            Outcome::Tie => Outcome::Tie,
            Outcome::Lose => Outcome::Win,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Win => "win",
            Outcome::Tie => "tie",
            Outcome::Lose => "lose",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transition {
    Stay,
    Upgrade,
    Downgrade,
}

impl Transition {
    pub const ALL: [Transition; 3] = [Transition::Stay, Transition::Upgrade, Transition::Downgrade];

    pub fn index(self) -> usize {
        match self {
            Transition::Stay => 0,
            Transition::Upgrade => 1,
            Transition::Downgrade => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transition::Stay => "stay",
            Transition::Upgrade => "upgrade",
            Transition::Downgrade => "downgrade",
        }
    }

    pub fn apply(self, prev: Action) -> Result<Action, DomainError> {
        match self {
            Transition::Stay => {
                if prev.game() != Game::Rps {
                    return Err(DomainError::new(format!("transitions are undefined for {prev}")));
                }
                Ok(prev)
            }
            Transition::Upgrade => prev.beaten_by(),
            Transition::Downgrade => prev.beats(),
        }
    }
}

/// Outcome for the player choosing `a` against `b`.
pub fn outcome_of(a: Action, b: Action) -> Result<Outcome, DomainError> {
    if a.game() != b.game() {
        return Err(DomainError::new(format!(
            "cannot compare {a} with {b}: different games"
        )));
    }
    if a == b || a.game() == Game::Pd {
        return Ok(Outcome::Tie);
    }
    if a.beats()? == b {
        Ok(Outcome::Win)
    } else {
        Ok(Outcome::Lose)
    }
}

pub fn classify_transition(prev: Action, next: Action) -> Result<Transition, DomainError> {
    if prev.game() != Game::Rps || next.game() != Game::Rps {
        return Err(DomainError::new(format!(
            "transition {prev} -> {next} is only defined for Rock-Paper-Scissors"
        )));
    }
    if prev == next {
        Ok(Transition::Stay)
    } else if prev.beaten_by()? == next {
        Ok(Transition::Upgrade)
    } else {
        Ok(Transition::Downgrade)
    }
}
