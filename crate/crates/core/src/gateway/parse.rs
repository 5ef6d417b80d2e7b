use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::game::{Action, Game, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no parsable choice in reply")]
pub struct ParseFailure {
    pub raw: String,
}

fn choice_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^[\s*_#>-]*choice[\s*_]*:[\s*_]*[\[(]?\s*([a-z]+)\s*[\])]?[\s*_.!]*$").unwrap())
}

/// Extracts the action from the last `Choice: <label>` line of a reply.
///
/// Matching is case-insensitive and tolerates surrounding whitespace,
/// brackets and markdown emphasis. PD replies must use the querying role's
/// letters (U/D for Red, L/R for Blue); the long names are also accepted.
pub fn parse_choice(reply: &str, game: Game, role: Option<Role>) -> Result<Action, ParseFailure> {
    reply
        .lines()
        .rev()
        .filter_map(|line| choice_line().captures(line))
        .find_map(|caps| Action::parse_label(&caps[1], game, role))
        .ok_or_else(|| ParseFailure { raw: reply.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(
            parse_choice("Reason: mixing.\nChoice: Paper", Game::Rps, None).unwrap(),
            Action::Paper
        );
        assert_eq!(parse_choice("choice: rock", Game::Rps, None).unwrap(), Action::Rock);
        let err = parse_choice("I think scissors is wise.", Game::Rps, None).unwrap_err();
        assert_eq!(err.raw, "I think scissors is wise.");
    }

    #[test]
    fn tolerates_decoration() {
        for reply in [
            "Choice: [Scissors]",
            "  **Choice:** Scissors  ",
            "Choice:scissors.",
            "- Choice: (Scissors)",
        ] {
            assert_eq!(
                parse_choice(reply, Game::Rps, None).unwrap(),
                Action::Scissors,
                "{reply}"
            );
        }
    }

    #[test]
    fn last_valid_line_wins() {
        let reply = "Choice: Rock\nOn reflection...\nChoice: Paper";
        assert_eq!(parse_choice(reply, Game::Rps, None).unwrap(), Action::Paper);
        // an echoed format line is not a choice
        let reply = "Choice: Rock\nChoice: [Rock/Paper/Scissors]";
        assert_eq!(parse_choice(reply, Game::Rps, None).unwrap(), Action::Rock);
    }

    #[test]
    fn pd_labels_follow_role() {
        assert_eq!(
            parse_choice("Reason: x\nChoice: U", Game::Pd, Some(Role::Red)).unwrap(),
            Action::Cooperate
        );
        assert_eq!(
            parse_choice("Choice: R", Game::Pd, Some(Role::Blue)).unwrap(),
            Action::Defect
        );
        assert!(parse_choice("Choice: U", Game::Pd, Some(Role::Blue)).is_err());
        assert!(parse_choice("Choice: Rock", Game::Pd, Some(Role::Red)).is_err());
    }
}
