//! Metrics and tests over round logs, plus CSV layouts for every report.

pub mod cluster;
pub mod markov;
pub mod metrics;
pub mod stats;
pub mod transitions;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;
use crate::game::{Game, Outcome, Transition};
use crate::persistence::{CsvReport, Log};
use crate::{fmt_points, fmt_prob, fmt_stat};

pub use cluster::{kmeans, Clustering, DEFAULT_CLUSTER_SEED, DEFAULT_K, DEFAULT_RESTARTS};
pub use markov::{markov_stationary_payoffs, transition_matrix, StationaryPayoffs};
pub use metrics::{cooperation_rates, differentials, CooperationReport, CooperationRow, DifferentialReport, Grouping};
pub use stats::{chi_square_counts, chi_square_sf, regularized_gamma_p, regularized_gamma_q, IndependenceTest, ALPHA};
pub use transitions::{
    chi_square_independence, choice_proportions, rule_label, ternary_coords, transition_contingency, ChoiceProportions,
    ContingencyTable, TransitionProfile, UNCLASSIFIED,
};

/// Rule label and cluster of one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyClass {
    pub agent: String,
    pub label: String,
    /// `None` when the subject was not clustered (no significant outcome
    /// dependence, or too few clusterable subjects).
    pub cluster: Option<usize>,
}

/// Labels every profile and clusters the outcome-dependent ones.
pub fn classify_strategy(
    profiles: &[TransitionProfile],
    dependent: &[bool],
    seed: u64,
) -> Result<(Vec<StrategyClass>, Option<Clustering>), DomainError> {
    if profiles.len() != dependent.len() {
        return Err(DomainError::new("one dependence flag per profile is required"));
    }
    let chosen: Vec<usize> = (0..profiles.len())
        .filter(|&i| dependent[i] && rule_label(&profiles[i]) != UNCLASSIFIED)
        .collect();
    let clustering = if chosen.len() >= DEFAULT_K {
        let points: Vec<Vec<f64>> = chosen.iter().map(|&i| profiles[i].vector().to_vec()).collect();
        Some(kmeans(&points, DEFAULT_K, DEFAULT_RESTARTS, seed)?)
    } else {
        None
    };
    let classes = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| StrategyClass {
            agent: p.agent.clone(),
            label: rule_label(p),
            cluster: clustering
                .as_ref()
                .and_then(|c| chosen.iter().position(|&j| j == i).map(|k| c.assignments[k])),
        })
        .collect();
    Ok((classes, clustering))
}

/// Everything computed for one RPS subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectAnalysis {
    pub proportions: ChoiceProportions,
    pub contingency: ContingencyTable,
    pub test: Option<IndependenceTest>,
    pub profile: TransitionProfile,
    pub class: StrategyClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpsAnalysis {
    pub subjects: Vec<SubjectAnalysis>,
    pub clustering: Option<Clustering>,
    pub significant: usize,
    pub warnings: Vec<String>,
}

/// Subject ids in order of first appearance.
pub fn subjects(log: &Log) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in &log.rounds {
        for id in &r.agent_ids {
            if !out.contains(id) {
                out.push(id.clone());
            }
        }
    }
    out
}

/// Per-subject proportions, contingency tests, profiles and strategy
/// classes over the completed matches of an RPS log.
pub fn analyze_rps(log: &Log, seed: u64) -> Result<RpsAnalysis, DomainError> {
    let rounds = log.completed_rounds();
    if rounds.is_empty() {
        return Err(DomainError::new("log has no completed rounds"));
    }
    if let Some(r) = rounds.iter().find(|r| r.actions[0].game() != Game::Rps) {
        return Err(DomainError::new(format!(
            "match {} is not Rock-Paper-Scissors",
            r.match_id
        )));
    }
    let mut warnings = Vec::new();
    if log.aborted_matches() > 0 {
        warnings.push(format!("{} aborted match(es) excluded", log.aborted_matches()));
    }
    let mut subjects_out = Vec::new();
    let mut profiles = Vec::new();
    let mut dependent = Vec::new();
    for id in subjects(log) {
        let proportions = choice_proportions(&rounds, &id)?;
        let contingency = transition_contingency(&rounds, &id);
        let test = match chi_square_independence(&contingency) {
            Ok(t) => Some(t),
            Err(e) => {
                warnings.push(format!("{id}: {e}"));
                None
            }
        };
        let profile = TransitionProfile::from_table(&contingency);
        dependent.push(test.as_ref().is_some_and(|t| t.significant));
        profiles.push(profile.clone());
        subjects_out.push((proportions, contingency, test, profile));
    }
    let (classes, clustering) = classify_strategy(&profiles, &dependent, seed)?;
    let subjects = subjects_out
        .into_iter()
        .zip(classes)
        .map(|((proportions, contingency, test, profile), class)| SubjectAnalysis {
            proportions,
            contingency,
            test,
            profile,
            class,
        })
        .collect::<Vec<_>>();
    Ok(RpsAnalysis {
        significant: dependent.iter().filter(|d| **d).count(),
        subjects,
        clustering,
        warnings,
    })
}

/// `choices.csv`: one row per subject and action.
pub struct ChoiceTable<'a>(pub &'a [SubjectAnalysis]);

impl CsvReport for ChoiceTable<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec!["agent", "action", "count", "proportion"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for s in self.0 {
            let p = &s.proportions;
            for (i, a) in p.game.actions().iter().enumerate() {
                rows.push(vec![
                    p.agent.clone(),
                    a.label().to_string(),
                    p.counts[i].to_string(),
                    fmt_prob(p.proportions[i]),
                ]);
            }
        }
        rows
    }
}

/// `transitions.csv`: contingency counts in long form.
pub struct TransitionCounts<'a>(pub &'a [SubjectAnalysis]);

impl CsvReport for TransitionCounts<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec!["agent", "outcome", "stay", "upgrade", "downgrade", "total"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for s in self.0 {
            for o in Outcome::ALL {
                let c = s.contingency.counts[o.index()];
                let mut row = vec![s.class.agent.clone(), o.name().to_string()];
                row.extend(c.iter().map(u64::to_string));
                row.push(c.iter().sum::<u64>().to_string());
                rows.push(row);
            }
        }
        rows
    }
}

/// `independence.csv`: one chi-square test per subject.
pub struct IndependenceTable<'a>(pub &'a [SubjectAnalysis]);

impl CsvReport for IndependenceTable<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec!["agent", "statistic", "df", "p_value", "significant", "warnings"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0
            .iter()
            .map(|s| match &s.test {
                Some(t) => vec![
                    s.class.agent.clone(),
                    fmt_stat(t.statistic),
                    t.degrees_of_freedom.to_string(),
                    t.p_value.map(|p| format!("{p:.6e}")).unwrap_or_default(),
                    t.significant.to_string(),
                    t.warnings.join("; "),
                ],
                None => vec![
                    s.class.agent.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "false".into(),
                    s.contingency.warnings.join("; "),
                ],
            })
            .collect()
    }
}

/// `profiles.csv`: the nine conditional proportions, sample sizes, rule
/// label and cluster of each subject.
pub struct ProfileTable<'a>(pub &'a [SubjectAnalysis]);

const PROFILE_HEADER: [&str; 16] = [
    "agent",
    "win_stay",
    "win_upgrade",
    "win_downgrade",
    "tie_stay",
    "tie_upgrade",
    "tie_downgrade",
    "lose_stay",
    "lose_upgrade",
    "lose_downgrade",
    "n_win",
    "n_tie",
    "n_lose",
    "label",
    "cluster",
    "significant",
];

impl CsvReport for ProfileTable<'_> {
    fn header(&self) -> Vec<&'static str> {
        PROFILE_HEADER.to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0
            .iter()
            .map(|s| {
                let mut row = vec![s.class.agent.clone()];
                row.extend(s.profile.vector().iter().map(|&x| fmt_prob(x)));
                row.extend(s.profile.samples.iter().map(u64::to_string));
                row.push(s.class.label.clone());
                row.push(s.class.cluster.map(|c| c.to_string()).unwrap_or_default());
                row.push(s.test.as_ref().is_some_and(|t| t.significant).to_string());
                row
            })
            .collect()
    }
}

/// `ternary.csv`: plot coordinates of each non-empty outcome row. Corners:
/// stay (0,0), upgrade (1,0), downgrade (0.5, sqrt(3)/2).
pub struct TernaryTable<'a>(pub &'a [SubjectAnalysis]);

impl CsvReport for TernaryTable<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec!["agent", "outcome", "x", "y", "n"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for s in self.0 {
            for o in Outcome::ALL {
                let n = s.profile.samples[o.index()];
                if n == 0 {
                    continue;
                }
                let (x, y) = ternary_coords(s.profile.row(o)).expect("non-empty profile rows are normalized");
                rows.push(vec![
                    s.class.agent.clone(),
                    o.name().to_string(),
                    fmt_prob(x),
                    fmt_prob(y),
                    n.to_string(),
                ]);
            }
        }
        rows
    }
}

impl CsvReport for CooperationReport {
    fn header(&self) -> Vec<&'static str> {
        vec!["grouping", "group", "percent", "cooperative", "total", "source"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    self.grouping.name().to_string(),
                    r.group.clone(),
                    fmt_prob(r.percent),
                    r.cooperative.map(|c| c.to_string()).unwrap_or_default(),
                    r.total.map(|c| c.to_string()).unwrap_or_default(),
                    r.source.clone(),
                ]
            })
            .collect()
    }
}

/// `differentials.csv`.
pub struct DifferentialTable<'a>(pub &'a [DifferentialReport]);

impl CsvReport for DifferentialTable<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec![
            "agent",
            "bot",
            "matches",
            "win_differential",
            "payoff_differential",
            "source",
        ]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0
            .iter()
            .map(|d| {
                vec![
                    d.agent.clone(),
                    d.bot.clone(),
                    d.matches.to_string(),
                    fmt_points(d.win_differential),
                    fmt_points(d.payoff_differential),
                    d.source.clone(),
                ]
            })
            .collect()
    }
}

/// `stationary.csv`: analytic per-round payoffs of bot pairs.
pub struct StationaryTable<'a>(pub &'a [(String, String, StationaryPayoffs)]);

impl CsvReport for StationaryTable<'_> {
    fn header(&self) -> Vec<&'static str> {
        vec!["row_bot", "col_bot", "row_points", "col_points", "damping", "residual"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0
            .iter()
            .map(|(a, b, s)| {
                vec![
                    a.clone(),
                    b.clone(),
                    fmt_stat(s.points_per_round.0),
                    fmt_stat(s.points_per_round.1),
                    format!("{:e}", s.damping),
                    format!("{:e}", s.residual),
                ]
            })
            .collect()
    }
}

/// Differentials of every (subject, bot) pairing found in the log, plus
/// reference rows, in order of first appearance.
pub fn all_differentials(log: &Log, bots: &[String]) -> Vec<DifferentialReport> {
    let mut out = Vec::new();
    for r in &log.differential_refs {
        out.push(DifferentialReport {
            agent: r.population.clone(),
            bot: r.opponent.clone(),
            matches: 0,
            win_differential: r.win_differential,
            payoff_differential: r.payoff_differential,
            source: r.source.clone(),
        });
    }
    for agent in subjects(log) {
        if bots.contains(&agent) {
            continue;
        }
        for bot in bots {
            if let Ok(d) = metrics::computed_differentials(log, &agent, bot) {
                out.push(d);
            }
        }
    }
    out
}

/// Dominant transition after each outcome, for quick reading.
pub fn dominant_transitions(p: &TransitionProfile) -> [Option<Transition>; 3] {
    Outcome::ALL.map(|o| {
        if p.samples[o.index()] == 0 {
            return None;
        }
        let row = p.row(o);
        let mut best = Transition::Stay;
        for t in Transition::ALL {
            if row[t.index()] > row[best.index()] {
                best = t;
            }
        }
        Some(best)
    })
}

/// Report layouts the pipeline can emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Choices,
    Transitions,
    Independence,
    Profiles,
    Ternary,
    Differentials,
    Cooperation,
    CooperationByRound,
    CooperationByAgent,
}

impl ReportKind {
    pub const ALL: [ReportKind; 9] = [
        ReportKind::Choices,
        ReportKind::Transitions,
        ReportKind::Independence,
        ReportKind::Profiles,
        ReportKind::Ternary,
        ReportKind::Differentials,
        ReportKind::Cooperation,
        ReportKind::CooperationByRound,
        ReportKind::CooperationByAgent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::Choices => "choices",
            ReportKind::Transitions => "transitions",
            ReportKind::Independence => "independence",
            ReportKind::Profiles => "profiles",
            ReportKind::Ternary => "ternary",
            ReportKind::Differentials => "differentials",
            ReportKind::Cooperation => "cooperation",
            ReportKind::CooperationByRound => "cooperation_by_round",
            ReportKind::CooperationByAgent => "cooperation_by_agent",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }

    fn needs_rps(self) -> bool {
        !matches!(
            self,
            ReportKind::Differentials
                | ReportKind::Cooperation
                | ReportKind::CooperationByRound
                | ReportKind::CooperationByAgent
        )
    }
}

impl std::str::FromStr for ReportKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, DomainError> {
        ReportKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = ReportKind::ALL.iter().map(|k| k.name()).collect();
            DomainError::new(format!("unknown report `{s}` ({})", names.join(", ")))
        })
    }
}

/// Game of the log's rounds, if it has any.
pub fn log_game(log: &Log) -> Option<Game> {
    log.rounds.first().map(|r| r.actions[0].game())
}

/// Subjects whose id names a built-in transition bot.
pub fn default_bots(log: &Log) -> Vec<String> {
    subjects(log)
        .into_iter()
        .filter(|id| {
            crate::agents::builtin(id).is_some_and(|a| matches!(a.kind, crate::agents::AgentKind::TransitionBot { .. }))
        })
        .collect()
}

/// Reports that apply to this log: the RPS set when it holds RPS rounds,
/// cooperation tables for PD rounds or cooperation references, and
/// differentials when bots or differential references are present.
pub fn applicable_reports(log: &Log) -> Vec<ReportKind> {
    let game = log_game(log);
    ReportKind::ALL
        .into_iter()
        .filter(|k| match k {
            ReportKind::Differentials => !log.differential_refs.is_empty() || !default_bots(log).is_empty(),
            ReportKind::Cooperation => game == Some(Game::Pd) || !log.cooperation_refs.is_empty(),
            ReportKind::CooperationByRound | ReportKind::CooperationByAgent => game == Some(Game::Pd),
            _ => game == Some(Game::Rps),
        })
        .collect()
}

fn to_csv(report: &(impl CsvReport + ?Sized)) -> Result<String, crate::Error> {
    let mut buf = Vec::new();
    crate::persistence::write_csv(report, &report.header(), &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Renders one report as CSV text.
pub fn render_report(log: &Log, kind: ReportKind, bots: &[String], seed: u64) -> Result<String, crate::Error> {
    if kind.needs_rps() {
        if log_game(log) != Some(Game::Rps) {
            return Err(DomainError::new(format!("report `{}` needs a Rock-Paper-Scissors log", kind.name())).into());
        }
        let a = analyze_rps(log, seed)?;
        return match kind {
            ReportKind::Choices => to_csv(&ChoiceTable(&a.subjects)),
            ReportKind::Transitions => to_csv(&TransitionCounts(&a.subjects)),
            ReportKind::Independence => to_csv(&IndependenceTable(&a.subjects)),
            ReportKind::Profiles => to_csv(&ProfileTable(&a.subjects)),
            _ => to_csv(&TernaryTable(&a.subjects)),
        };
    }
    match kind {
        ReportKind::Differentials => {
            let bots = if bots.is_empty() {
                default_bots(log)
            } else {
                bots.to_vec()
            };
            let rows = all_differentials(log, &bots);
            if rows.is_empty() {
                return Err(DomainError::new("no agent-vs-bot matches or differential references in the log").into());
            }
            to_csv(&DifferentialTable(&rows))
        }
        ReportKind::Cooperation => to_csv(&cooperation_rates(log, Grouping::Treatment)),
        ReportKind::CooperationByRound => to_csv(&cooperation_rates(log, Grouping::Round)),
        _ => to_csv(&cooperation_rates(log, Grouping::Agent)),
    }
}

/// Every applicable report as (file name, CSV text).
pub fn render_all(log: &Log, bots: &[String], seed: u64) -> Result<Vec<(String, String)>, crate::Error> {
    applicable_reports(log)
        .into_iter()
        .map(|k| Ok((k.file_name(), render_report(log, k, bots, seed)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(agent: &str, win: [f64; 3], lose: [f64; 3]) -> TransitionProfile {
        TransitionProfile {
            agent: agent.into(),
            rows: [win, [1.0 / 3.0; 3], lose],
            samples: [20, 20, 20],
        }
    }

    #[test]
    fn classification_clusters_only_dependent_subjects() {
        let ps = vec![
            profile("a", [0.9, 0.05, 0.05], [0.05, 0.9, 0.05]),
            profile("b", [0.88, 0.06, 0.06], [0.06, 0.88, 0.06]),
            profile("c", [0.1, 0.1, 0.8], [0.8, 0.1, 0.1]),
            profile("d", [0.05, 0.05, 0.9], [0.05, 0.05, 0.9]),
            profile("e", [0.34, 0.33, 0.33], [0.33, 0.34, 0.33]),
        ];
        let (classes, clustering) = classify_strategy(&ps, &[true, true, true, true, false], 1).unwrap();
        assert_eq!(clustering.unwrap().assignments.len(), 4);
        assert_eq!(classes[0].cluster, classes[1].cluster);
        assert_ne!(classes[0].cluster, classes[2].cluster);
        assert_eq!(classes[4].cluster, None);
        assert_eq!(classes[2].label, "win-downgrade/lose-stay");
    }

    #[test]
    fn profile_csv_has_stable_columns() {
        let t = ContingencyTable {
            agent: "x".into(),
            counts: [[8, 1, 1], [1, 1, 1], [1, 8, 1]],
            warnings: vec![],
        };
        let p = TransitionProfile::from_table(&t);
        let s = SubjectAnalysis {
            proportions: ChoiceProportions {
                agent: "x".into(),
                game: Game::Rps,
                counts: vec![1, 1, 1],
                proportions: vec![1.0 / 3.0; 3],
            },
            test: chi_square_independence(&t).ok(),
            class: StrategyClass {
                agent: "x".into(),
                label: rule_label(&p),
                cluster: None,
            },
            contingency: t,
            profile: p,
        };
        let subjects = [s];
        let table = ProfileTable(&subjects);
        let rows = table.rows();
        assert_eq!(rows[0].len(), table.header().len());
        assert_eq!(rows[0][1], "0.800000");
        assert_eq!(rows[0][13], "win-stay/lose-upgrade");
        assert_eq!(TernaryTable(&subjects).rows().len(), 3);
    }
}
