//! Outcome-conditioned transition statistics for Rock-Paper-Scissors play.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{chi_square_counts, IndependenceTest};
use crate::error::DomainError;
use crate::game::{classify_transition, Game, Outcome, Transition};
use crate::protocol::RoundRecord;

/// Rows: previous-round outcome (Win, Tie, Lose). Columns: transition
/// (Stay, Upgrade, Downgrade).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub agent: String,
    pub counts: [[u64; 3]; 3],
    pub warnings: Vec<String>,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, o: Outcome) -> u64 {
        self.counts[o.index()].iter().sum()
    }

    pub fn add(&mut self, other: &ContingencyTable) {
        for i in 0..3 {
            for j in 0..3 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

/// Round records of each (match, slot) run played by `agent`, in round order.
pub(crate) fn runs_of<'a>(
    rounds: &'a [RoundRecord],
    agent: &str,
) -> BTreeMap<(String, String, usize), Vec<&'a RoundRecord>> {
    let mut runs: BTreeMap<(String, String, usize), Vec<&RoundRecord>> = BTreeMap::new();
    for r in rounds {
        for slot in r.slots_of(agent) {
            runs.entry((r.session_id.clone(), r.match_id.clone(), slot))
                .or_default()
                .push(r);
        }
    }
    for run in runs.values_mut() {
        run.sort_by_key(|r| r.round_index);
    }
    runs
}

/// Tallies (outcome of round t-1, transition from t-1 to t) over every
/// match the agent played. First rounds contribute nothing.
pub fn transition_contingency(rounds: &[RoundRecord], agent: &str) -> ContingencyTable {
    let mut table = ContingencyTable {
        agent: agent.to_string(),
        ..Default::default()
    };
    let mut skipped = 0;
    for ((_, _, slot), run) in runs_of(rounds, agent) {
        for pair in run.windows(2) {
            let (prev, next) = (pair[0], pair[1]);
            if next.round_index != prev.round_index + 1 {
                skipped += 1;
                continue;
            }
            match classify_transition(prev.actions[slot], next.actions[slot]) {
                Ok(t) => table.counts[prev.outcomes[slot].index()][t.index()] += 1,
                Err(_) => skipped += 1,
            }
        }
    }
    if skipped > 0 {
        table
            .warnings
            .push(format!("{skipped} non-consecutive or non-RPS round pair(s) skipped"));
    }
    if table.total() == 0 {
        table
            .warnings
            .push("no transitions: every match has a single round".into());
    }
    table
}

pub fn chi_square_independence(t: &ContingencyTable) -> Result<IndependenceTest, DomainError> {
    let counts: Vec<Vec<f64>> = t.counts.iter().map(|r| r.iter().map(|&c| c as f64).collect()).collect();
    let mut test = chi_square_counts(&counts)?;
    test.warnings.extend(t.warnings.iter().cloned());
    Ok(test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionProfile {
    pub agent: String,
    /// Per-outcome distribution over (Stay, Upgrade, Downgrade). Rows with
    /// no samples are all zero.
    pub rows: [[f64; 3]; 3],
    pub samples: [u64; 3],
}

impl TransitionProfile {
    pub fn from_table(t: &ContingencyTable) -> Self {
        let mut rows = [[0.0; 3]; 3];
        let mut samples = [0; 3];
        for o in Outcome::ALL {
            let n = t.row_total(o);
            samples[o.index()] = n;
            if n > 0 {
                for tr in Transition::ALL {
                    rows[o.index()][tr.index()] = t.counts[o.index()][tr.index()] as f64 / n as f64;
                }
            }
        }
        TransitionProfile {
            agent: t.agent.clone(),
            rows,
            samples,
        }
    }

    pub fn row(&self, o: Outcome) -> [f64; 3] {
        self.rows[o.index()]
    }

    /// Win, tie and lose rows concatenated.
    pub fn vector(&self) -> [f64; 9] {
        let mut v = [0.0; 9];
        for (i, row) in self.rows.iter().enumerate() {
            v[3 * i..3 * i + 3].copy_from_slice(row);
        }
        v
    }
}

/// Barycentric point of a (Stay, Upgrade, Downgrade) distribution with Stay
/// at (0, 0), Upgrade at (1, 0) and Downgrade at (1/2, sqrt(3)/2).
pub fn ternary_coords(p: [f64; 3]) -> Result<(f64, f64), DomainError> {
    if p.iter().any(|&x| !(x >= -1e-12)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DomainError::new(format!("{p:?} is not a probability distribution")));
    }
    let (up, down) = (p[1], p[2]);
    Ok((up + 0.5 * down, down * 3f64.sqrt() / 2.0))
}

fn dominant(row: [f64; 3]) -> Transition {
    let mut best = Transition::Stay;
    for t in Transition::ALL {
        if row[t.index()] > row[best.index()] {
            best = t;
        }
    }
    best
}

pub const UNCLASSIFIED: &str = "unclassified";

/// Rule label from the dominant post-win and post-loss transitions, e.g.
/// `win-stay/lose-upgrade`. Ties go to the earlier of Stay, Upgrade, Downgrade.
pub fn rule_label(p: &TransitionProfile) -> String {
    if p.samples[Outcome::Win.index()] == 0 || p.samples[Outcome::Lose.index()] == 0 {
        return UNCLASSIFIED.into();
    }
    format!(
        "win-{}/lose-{}",
        dominant(p.row(Outcome::Win)).name(),
        dominant(p.row(Outcome::Lose)).name()
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceProportions {
    pub agent: String,
    pub game: Game,
    pub counts: Vec<u64>,
    pub proportions: Vec<f64>,
}

impl ChoiceProportions {
    pub fn rounds(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Empirical action frequencies of `agent` over all its rounds.
pub fn choice_proportions(rounds: &[RoundRecord], agent: &str) -> Result<ChoiceProportions, DomainError> {
    let mut game = None;
    let mut counts = Vec::new();
    for r in rounds {
        for slot in r.slots_of(agent) {
            let a = r.actions[slot];
            let g = *game.get_or_insert(a.game());
            if g != a.game() {
                return Err(DomainError::new(format!(
                    "agent `{agent}` appears in more than one game"
                )));
            }
            counts.resize(g.action_count(), 0u64);
            counts[a.index()] += 1;
        }
    }
    let Some(game) = game else {
        return Err(DomainError::new(format!("no rounds for agent `{agent}`")));
    };
    let n: u64 = counts.iter().sum();
    let proportions = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(ChoiceProportions {
        agent: agent.to_string(),
        game,
        counts,
        proportions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{outcome_of, Action};
    use proptest::prelude::*;

    pub(crate) fn rps_rounds(match_id: &str, mine: &[Action], theirs: &[Action]) -> Vec<RoundRecord> {
        mine.iter()
            .zip(theirs)
            .enumerate()
            .map(|(i, (&a, &b))| {
                let o = outcome_of(a, b).unwrap();
                RoundRecord {
                    session_id: "s".into(),
                    match_id: match_id.into(),
                    round_index: i + 1,
                    agent_ids: ["me".into(), "bot".into()],
                    actions: [a, b],
                    payoffs: (0.0, 0.0),
                    outcomes: [o, o.complement()],
                    treatment: None,
                    die_face: None,
                    continues: i + 1 < mine.len(),
                    timestamp: None,
                }
            })
            .collect()
    }

    #[test]
    fn hand_tally() {
        use Action::*;
        // R (win) then R; P (lose) then S
        let mut rounds = rps_rounds("m1", &[Rock, Rock], &[Scissors, Rock]);
        rounds.extend(rps_rounds("m2", &[Paper, Scissors], &[Scissors, Scissors]));
        let t = transition_contingency(&rounds, "me");
        let mut expected = [[0u64; 3]; 3];
        expected[Outcome::Win.index()][Transition::Stay.index()] = 1;
        // Scissors beats Paper, so Paper -> Scissors is an upgrade
        expected[Outcome::Lose.index()][Transition::Upgrade.index()] = 1;
        assert_eq!(t.counts, expected);
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn single_round_matches_give_an_empty_flagged_table() {
        use Action::*;
        let mut rounds = rps_rounds("m1", &[Rock], &[Paper]);
        rounds.extend(rps_rounds("m2", &[Paper], &[Paper]));
        let t = transition_contingency(&rounds, "me");
        assert_eq!(t.total(), 0);
        assert_eq!(t.warnings.len(), 1);
        assert!(chi_square_independence(&t).is_err());
    }

    #[test]
    fn proportions() {
        use Action::*;
        let mut mine = vec![Rock; 25];
        mine.extend(vec![Paper; 50]);
        mine.extend(vec![Scissors; 25]);
        let rounds = rps_rounds("m", &mine, &[Rock; 100]);
        let p = choice_proportions(&rounds, "me").unwrap();
        assert_eq!(p.proportions, vec![0.25, 0.5, 0.25]);
        assert!(choice_proportions(&rounds, "nobody").is_err());
    }

    #[test]
    fn ternary_corners() {
        assert_eq!(ternary_coords([1.0, 0.0, 0.0]).unwrap(), (0.0, 0.0));
        let (x, y) = ternary_coords([0.0, 0.0, 1.0]).unwrap();
        assert!((x - 0.5).abs() < 1e-15 && (y - 0.866_025_403_784_438_6).abs() < 1e-15);
        let (x, y) = ternary_coords([1.0 / 3.0; 3]).unwrap();
        assert!((x - 0.5).abs() < 1e-12 && (y - 0.288_675_134_594_812_9).abs() < 1e-12);
        assert!(ternary_coords([0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn labels() {
        let mk = |win: [f64; 3], lose: [f64; 3]| TransitionProfile {
            agent: "x".into(),
            rows: [win, [1.0 / 3.0; 3], lose],
            samples: [10, 10, 10],
        };
        assert_eq!(
            rule_label(&mk([0.9, 0.05, 0.05], [0.05, 0.9, 0.05])),
            "win-stay/lose-upgrade"
        );
        assert_eq!(
            rule_label(&mk([0.1, 0.1, 0.8], [0.1, 0.1, 0.8])),
            "win-downgrade/lose-downgrade"
        );
        let mut p = mk([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        p.samples[2] = 0;
        assert_eq!(rule_label(&p), UNCLASSIFIED);
    }

    proptest! {
        #[test]
        fn ternary_points_stay_in_the_triangle(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            prop_assume!(a + b + c > 1e-6);
            let s = a + b + c;
            let (x, y) = ternary_coords([a / s, b / s, c / s]).unwrap();
            let h = 3f64.sqrt();
            prop_assert!(y >= -1e-12);
            prop_assert!(y <= h * x + 1e-12);
            prop_assert!(y <= h * (1.0 - x) + 1e-12);
        }

        #[test]
        fn profile_rows_normalize(cells in proptest::collection::vec(0u64..50, 9)) {
            let mut t = ContingencyTable::default();
            for (k, c) in cells.iter().enumerate() {
                t.counts[k / 3][k % 3] = *c;
            }
            let p = TransitionProfile::from_table(&t);
            for o in Outcome::ALL {
                let sum: f64 = p.row(o).iter().sum();
                if p.samples[o.index()] > 0 {
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                } else {
                    prop_assert_eq!(sum, 0.0);
                }
            }
        }
    }
}
