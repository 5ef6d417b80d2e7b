use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering as AtomicOrdering};
use std::sync::mpsc;

use serde::Serialize;

use crate::agents::{AgentKind, AgentSpec};
use crate::error::{Error, Result};
use crate::gateway::{BackendKind, Gateway};
use crate::matrix::PayoffMatrix;
use crate::persistence::{
    canonical_line, read_envelopes, JsonlSink, LogEnvelope, LogEvent, MessageEvent, RunManifest, LOG_VERSION,
};
use crate::protocol::engine::run_engine;
use crate::protocol::{run_match, ContinuationRule, MatchEngine, MatchOutput, Participant, PlannedMatch, SessionPlan};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "log.jsonl";

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Matches run in parallel; output order is always plan order.
    pub jobs: usize,
    /// Stamp round records and the manifest with wall-clock time.
    pub timestamps: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub session_id: String,
    pub matches: usize,
    pub completed: usize,
    pub aborted: usize,
    pub rounds: usize,
    pub manifest: PathBuf,
    pub log: PathBuf,
    /// Points per participant id over completed matches.
    pub points: BTreeMap<String, f64>,
}

/// Runs every match of `plan`, handing outputs to `sink` in plan order.
pub fn execute_plan(
    plan: &SessionPlan,
    gateway: &Gateway,
    jobs: usize,
    timestamps: bool,
    mut sink: impl FnMut(usize, MatchOutput) -> Result<()>,
) -> Result<()> {
    let n = plan.matches.len();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<MatchOutput>)>();
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(n.max(1)) {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || loop {
                if stop.load(AtomicOrdering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, AtomicOrdering::Relaxed);
                if i >= n {
                    break;
                }
                let out = run_match(plan.match_setup(i, timestamps), Some(gateway));
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut waiting: BTreeMap<usize, Result<MatchOutput>> = BTreeMap::new();
        let mut want = 0;
        for (i, out) in rx {
            waiting.insert(i, out);
            while let Some(out) = waiting.remove(&want) {
                let delivered = out.and_then(|o| sink(want, o));
                if let Err(e) = delivered {
                    stop.store(true, AtomicOrdering::Relaxed);
                    return Err(e);
                }
                want += 1;
            }
        }
        Ok(())
    })
}

/// Log events of one finished match, in write order.
pub fn match_events(output: &MatchOutput) -> Vec<LogEvent> {
    let mut events = vec![LogEvent::MatchStart(output.start.clone())];
    events.extend(output.result.rounds.iter().cloned().map(LogEvent::Round));
    for (slot, t) in &output.transcripts {
        for m in &t.messages {
            events.push(LogEvent::Message(MessageEvent {
                conversation: t.conversation.clone(),
                slot: *slot,
                role: m.role,
                text: m.text.clone(),
            }));
        }
    }
    events.push(LogEvent::MatchEnd(output.end.clone()));
    events
}

fn match_envelopes(session_id: &str, output: &MatchOutput) -> Vec<LogEnvelope> {
    match_events(output)
        .into_iter()
        .enumerate()
        .map(|(i, event)| LogEnvelope {
            v: LOG_VERSION,
            session_id: session_id.to_string(),
            match_id: output.result.match_id.clone(),
            seq: i as u64 + 1,
            event,
        })
        .collect()
}

/// Writes the manifest, then runs the plan into `log.jsonl`. Each match is
/// flushed as soon as it and all earlier matches are done, so an
/// interrupted run leaves a manifest plus a consistent log prefix.
pub fn run_session(plan: &SessionPlan, gateway: &Gateway, opts: &RunOptions) -> Result<RunSummary> {
    plan.validate()?;
    if plan.has_human() {
        return Err(Error::Config(
            "plan contains human participants; use the session service for live play".into(),
        ));
    }
    std::fs::create_dir_all(&opts.out_dir)?;
    let manifest_path = opts.out_dir.join(MANIFEST_FILE);
    let log_path = opts.out_dir.join(LOG_FILE);
    RunManifest::new(plan, LOG_FILE, opts.timestamps).write(&manifest_path)?;
    let mut log = JsonlSink::create(&log_path)?;
    let mut summary = RunSummary {
        session_id: plan.session_id.clone(),
        matches: plan.matches.len(),
        completed: 0,
        aborted: 0,
        rounds: 0,
        manifest: manifest_path,
        log: log_path,
        points: plan.participants.iter().map(|p| (p.id.clone(), 0.0)).collect(),
    };
    execute_plan(plan, gateway, opts.jobs, opts.timestamps, |_, out| {
        for env in match_envelopes(&plan.session_id, &out) {
            log.append_envelope(env)?;
        }
        log.flush()?;
        summary.rounds += out.result.rounds.len();
        if out.result.aborted() {
            summary.aborted += 1;
        } else {
            summary.completed += 1;
            let ids = &out.start.agent_ids;
            *summary.points.get_mut(&ids[0]).expect("known id") += out.result.final_totals.0;
            *summary.points.get_mut(&ids[1]).expect("known id") += out.result.final_totals.1;
        }
        tracing::info!(match_id = %out.result.match_id, termination = ?out.result.termination, "match done");
        Ok(())
    })?;
    log.flush()?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub matches: usize,
    pub lines_compared: usize,
    pub identical: bool,
    /// 1-based line of the first mismatch with the recorded and regenerated text.
    pub first_difference: Option<(usize, String, String)>,
}

/// Re-executes a logged run from its manifest and compares the regenerated
/// log with the recorded one, ignoring timestamps. Model-backed agents are
/// served their logged replies.
pub fn replay_run(run_dir: &Path) -> Result<ReplayReport> {
    let manifest = RunManifest::load(&run_dir.join(MANIFEST_FILE))?;
    let log_path = run_dir.join(&manifest.log_file);
    let recorded = read_envelopes(&log_path)?;
    let mut plan = manifest.plan.clone();
    for p in &mut plan.participants {
        if let AgentKind::Llm { endpoint } = &mut p.agent.kind {
            endpoint.backend = BackendKind::Replay {
                path: log_path.display().to_string(),
            };
            endpoint.backoff_ms = 0;
        }
    }
    let gateway = Gateway::new(4);
    let mut regenerated = Vec::new();
    execute_plan(&plan, &gateway, 1, false, |_, out| {
        regenerated.extend(match_envelopes(&plan.session_id, &out));
        Ok(())
    })?;
    let mut first_difference = None;
    let total = recorded.len().max(regenerated.len());
    for i in 0..total {
        let a = recorded.get(i).map(canonical_line).transpose()?.unwrap_or_default();
        let b = regenerated.get(i).map(canonical_line).transpose()?.unwrap_or_default();
        if a != b {
            first_difference = Some((i + 1, a, b));
            break;
        }
    }
    Ok(ReplayReport {
        session_id: manifest.session_id,
        matches: plan.matches.len(),
        lines_compared: total,
        identical: first_difference.is_none(),
        first_difference,
    })
}

/// Mean per-round payoffs of `a` (slot 0) and `b` over `matches` seeded
/// matches of `rounds` rounds each, without keeping round records.
pub fn simulate_mean_payoffs(
    a: &AgentSpec,
    b: &AgentSpec,
    matrix: &PayoffMatrix,
    rounds: usize,
    matches: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let game = matrix
        .game
        .ok_or_else(|| Error::Validation(format!("matrix `{}` has no game", matrix.name)))?;
    let mut sum = (0.0, 0.0);
    let mut played = 0usize;
    for m in 0..matches {
        let setup = crate::protocol::MatchSetup {
            session_id: "simulation".into(),
            game,
            matrix: matrix.clone(),
            planned: PlannedMatch {
                match_id: format!("sim{m:06}"),
                slots: [0, 1],
                rule: ContinuationRule::Finite { horizon: rounds },
                treatment: None,
                part: 1,
                repetition: m,
            },
            participants: [
                Participant::new("a", None, a.clone()),
                Participant::new("b", None, b.clone()),
            ],
            master_seed: seed,
            parts: 1,
            matches_in_part: 1,
            timestamps: false,
        };
        let mut engine = MatchEngine::new(setup)?;
        engine.set_keep_records(false);
        run_engine(&mut engine, None)?;
        let t = engine.totals();
        sum = (sum.0 + t.0, sum.1 + t.1);
        played += rounds;
    }
    Ok((sum.0 / played as f64, sum.1 / played as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::builtin;
    use crate::game::Role;
    use crate::gateway::{MockMode, ModelEndpoint};
    use crate::protocol::{plan_bot_series, plan_pd_session, ContinuationMode, Ordering};

    fn opts(dir: &Path, jobs: usize) -> RunOptions {
        RunOptions {
            out_dir: dir.to_path_buf(),
            jobs,
            timestamps: false,
        }
    }

    #[test]
    fn parallel_runs_write_the_same_log_as_serial_runs() {
        let plan = plan_bot_series(
            &builtin("uniform").unwrap(),
            &[builtin("wslu").unwrap(), builtin("wdls").unwrap()],
            3,
            20,
        )
        .unwrap()
        .with_seed(7);
        let gw = Gateway::new(2);
        let d1 = tempfile::tempdir().unwrap();
        let d4 = tempfile::tempdir().unwrap();
        let s1 = run_session(&plan, &gw, &opts(d1.path(), 1)).unwrap();
        run_session(&plan, &gw, &opts(d4.path(), 4)).unwrap();
        assert_eq!(s1.matches, 6);
        assert_eq!(s1.rounds, 120);
        assert_eq!(
            std::fs::read(d1.path().join(LOG_FILE)).unwrap(),
            std::fs::read(d4.path().join(LOG_FILE)).unwrap()
        );
        let report = replay_run(d1.path()).unwrap();
        assert!(report.identical, "{report:?}");
    }

    #[test]
    fn replay_detects_tampering() {
        let plan = plan_bot_series(&builtin("nash_rps").unwrap(), &[builtin("wslu").unwrap()], 1, 5)
            .unwrap()
            .with_seed(3);
        let dir = tempfile::tempdir().unwrap();
        run_session(&plan, &Gateway::new(1), &opts(dir.path(), 1)).unwrap();
        let path = dir.path().join(LOG_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"round_index\":3", "\"round_index\":4", 1);
        std::fs::write(&path, tampered).unwrap();
        let report = replay_run(dir.path()).unwrap();
        assert!(!report.identical);
        assert_eq!(report.first_difference.unwrap().0, 4);
    }

    #[test]
    fn llm_runs_replay_from_their_transcripts() {
        let mock = AgentSpec::new(
            "mock",
            AgentKind::Llm {
                endpoint: ModelEndpoint::mock("mock-model", MockMode::Uniform { seed: 11 }),
            },
        );
        let people: Vec<Participant> = (0..6)
            .map(|i| {
                let group = if i < 3 { Role::Red } else { Role::Blue };
                let agent = if i % 2 == 0 {
                    mock.clone()
                } else {
                    builtin("titfortat").unwrap()
                };
                Participant::new(format!("p{i}"), Some(group), agent)
            })
            .collect();
        let plan = plan_pd_session(&people, Ordering::Normal, ContinuationMode::Dice)
            .unwrap()
            .with_seed(5);
        let dir = tempfile::tempdir().unwrap();
        let summary = run_session(&plan, &Gateway::new(2), &opts(dir.path(), 2)).unwrap();
        assert_eq!(summary.aborted, 0);
        let report = replay_run(dir.path()).unwrap();
        assert!(report.identical, "{report:?}");
    }

    #[test]
    fn humans_are_refused() {
        let plan = plan_bot_series(
            &AgentSpec::new("h", AgentKind::Human),
            &[builtin("wslu").unwrap()],
            1,
            5,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_session(&plan, &Gateway::new(1), &opts(dir.path(), 1)),
            Err(Error::Config(_))
        ));
    }
}
