//! `gamelab`: solve games, run experiments, analyze logs, serve live
//! sessions, replay runs and validate bundled data.
//!
//! Every verb ends by printing one JSON summary line on stdout (on stderr
//! when stdout carries CSV). Exit status: 0 success, 1 runtime failure,
//! 2 invalid configuration or input.

mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use gamelab_core::agents::{builtin, AgentKind};
use gamelab_core::analysis::{
    applicable_reports, markov_stationary_payoffs, render_report, ReportKind, StationaryTable, DEFAULT_CLUSTER_SEED,
};
use gamelab_core::equilibrium::support_enumeration_nash;
use gamelab_core::error::Error;
use gamelab_core::gateway::Gateway;
use gamelab_core::persistence::{write_csv, CsvReport, Log, LogFilter};
use gamelab_core::protocol::presets::{load_matrix, AgentRef, Profile, RunConfig};
use gamelab_core::protocol::{replay_run, run_session, ContinuationMode, Ordering, RunOptions, SessionPlan};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "gamelab", version, about = "Repeated-game experiment harness")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every Nash equilibrium of a bimatrix game.
    Solve {
        /// Bundled matrix name or matrix file.
        #[arg(long, default_value = "rps_modified")]
        matrix: String,
    },
    /// Round-robin Rock-Paper-Scissors tournament.
    RunRps(RunArgs),
    /// One agent against each bot, repeated.
    RunBots(RunArgs),
    /// Prisoner's Dilemma session with rotation matching.
    RunPd(RunArgs),
    /// Print report CSVs for a log.
    Analyze {
        #[command(flatten)]
        input: LogArgs,
        /// Report to print; repeat or comma-separate for several. Default: all that apply.
        #[arg(long = "report", value_delimiter = ',')]
        reports: Vec<ReportKind>,
        /// Write files into this directory instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write every applicable report, plus analytic bot-pair payoffs, as CSV files.
    Export {
        #[command(flatten)]
        input: LogArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve live sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Session manifests and logs go under this directory.
        #[arg(long, default_value = "sessions")]
        data_dir: PathBuf,
        /// Seconds without a choice before a session is abandoned.
        #[arg(long, default_value_t = 1800)]
        idle_timeout: u64,
        /// Environment variable holding a shared token required on every request.
        #[arg(long)]
        token_env: Option<String>,
        /// Concurrent model calls across all sessions.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
    /// Re-execute a run from its manifest and compare logs.
    Replay {
        /// Run directory holding manifest.json and the log.
        run: PathBuf,
    },
    /// Check bundled matrices, bot tables, templates and fixtures, plus any given files.
    Validate {
        /// Fixture directory. Default: ./fixtures, else the one shipped with the source.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Extra matrix files, run configs (.json) or logs (.jsonl).
        files: Vec<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON run config; flags override it, it overrides the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// replication-rps, replication-bots or replication-pd.
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    session_id: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    matrix: Option<String>,
    /// Built-in agents or endpoint names from the config.
    #[arg(long = "agents", alias = "agent", value_delimiter = ',')]
    agents: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    bots: Vec<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long = "reps", alias = "repetitions")]
    repetitions: Option<usize>,
    /// Leave out matches of an agent against itself.
    #[arg(long)]
    no_self_pairs: bool,
    #[arg(long)]
    subjects: Option<usize>,
    /// dice or finite.
    #[arg(long)]
    mode: Option<ContinuationMode>,
    /// normal or usd.
    #[arg(long)]
    ordering: Option<Ordering>,
    /// Explicit treatments such as delta=0.5 or H=2, in play order.
    #[arg(long, value_delimiter = ',')]
    treatments: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Matches run in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    /// Stamp round records with wall-clock time.
    #[arg(long)]
    timestamps: bool,
    /// Skip report generation after the run.
    #[arg(long)]
    no_reports: bool,
}

impl RunArgs {
    fn flags(&self) -> RunConfig {
        let names = |v: &[String]| (!v.is_empty()).then(|| v.iter().cloned().map(AgentRef::Name).collect());
        RunConfig {
            profile: self.profile,
            session_id: self.session_id.clone(),
            seed: self.seed,
            matrix: self.matrix.clone(),
            agents: names(&self.agents),
            bots: names(&self.bots),
            rounds: self.rounds,
            repetitions: self.repetitions,
            self_pairs: self.no_self_pairs.then_some(false),
            subjects: self.subjects,
            mode: self.mode,
            ordering: self.ordering,
            treatments: (!self.treatments.is_empty()).then(|| self.treatments.clone()),
            out_dir: self.out.clone(),
            jobs: self.jobs,
            timestamps: self.timestamps.then_some(true),
            ..Default::default()
        }
    }
}

#[derive(Args, Clone)]
struct LogArgs {
    /// JSONL log to read.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    session: Option<String>,
    #[arg(long = "match")]
    match_id: Option<String>,
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    /// Bots for differential reports. Default: built-in bots found in the log.
    #[arg(long, value_delimiter = ',')]
    bots: Vec<String>,
    /// Seed of the strategy clustering.
    #[arg(long, default_value_t = DEFAULT_CLUSTER_SEED)]
    seed: u64,
}

impl LogArgs {
    fn load(&self) -> Result<Log, Error> {
        let filter = LogFilter {
            session: self.session.clone(),
            match_id: self.match_id.clone(),
            agent: self.agent.clone(),
            treatment: self.treatment.clone(),
        };
        Log::load(&self.log, &filter)
    }
}

/// A failure carrying its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Validation(_) | Error::Plan(_) | Error::Domain(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    let verb = verb_name(&cli.command);
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            println!("{}", json!({ "verb": verb, "ok": false, "error": f.message }));
            ExitCode::from(f.code)
        }
    }
}

fn verb_name(c: &Command) -> &'static str {
    match c {
        Command::Solve { .. } => "solve",
        Command::RunRps(_) => "run-rps",
        Command::RunBots(_) => "run-bots",
        Command::RunPd(_) => "run-pd",
        Command::Analyze { .. } => "analyze",
        Command::Export { .. } => "export",
        Command::Serve { .. } => "serve",
        Command::Replay { .. } => "replay",
        Command::Validate { .. } => "validate",
    }
}

fn summary(verb: &str, mut fields: Value) -> String {
    let obj = fields.as_object_mut().expect("summary fields are an object");
    let mut out = serde_json::Map::new();
    out.insert("verb".into(), json!(verb));
    out.insert("ok".into(), json!(true));
    out.append(obj);
    Value::Object(out).to_string()
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Solve { matrix } => solve(&matrix),
        Command::RunRps(a) => run("run-rps", Profile::ReplicationRps, &a),
        Command::RunBots(a) => run("run-bots", Profile::ReplicationBots, &a),
        Command::RunPd(a) => run("run-pd", Profile::ReplicationPd, &a),
        Command::Analyze { input, reports, out } => analyze(&input, &reports, out.as_deref()),
        Command::Export { input, out } => export(&input, &out),
        Command::Serve {
            addr,
            data_dir,
            idle_timeout,
            token_env,
            jobs,
        } => serve(&addr, data_dir, idle_timeout, token_env, jobs),
        Command::Replay { run } => replay(&run),
        Command::Validate { fixtures, files } => {
            let report = validate::run(fixtures.as_deref(), &files);
            let line = summary(
                "validate",
                json!({ "checked": report.checked, "failures": report.failures }),
            );
            if report.failures.is_empty() {
                println!("{line}");
                Ok(())
            } else {
                for f in &report.failures {
                    eprintln!("invalid: {f}");
                }
                Err(invalid(format!(
                    "{} of {} checks failed",
                    report.failures.len(),
                    report.checked
                )))
            }
        }
    }
}

fn round12(x: f64) -> f64 {
    let r = (x * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn solve(name: &str) -> Result<(), Failure> {
    let m = load_matrix(name).map_err(|e| invalid(e.to_string()))?;
    let eqs = support_enumeration_nash(&m);
    let list: Vec<Value> = eqs
        .iter()
        .map(|e| {
            let s = |p: &[f64]| p.iter().map(|x| round12(*x)).collect::<Vec<_>>();
            json!({
                "row": s(e.row_strategy.probabilities()),
                "col": s(e.col_strategy.probabilities()),
                "row_value": round12(e.row_value),
                "col_value": round12(e.col_value),
            })
        })
        .collect();
    println!("{}", summary("solve", json!({ "matrix": m.name, "equilibria": list })));
    Ok(())
}

fn plan_for(verb: &str, config: &RunConfig) -> Result<SessionPlan, Failure> {
    let plan = match verb {
        "run-rps" => config.rps_plan(),
        "run-bots" => config.bots_plan(),
        _ => config.pd_plan(),
    };
    // planning errors are configuration errors whatever their kind
    plan.map_err(|e| invalid(e.to_string()))
}

fn run(verb: &str, fallback: Profile, args: &RunArgs) -> Result<(), Failure> {
    let file = args
        .config
        .as_ref()
        .map(RunConfig::load)
        .transpose()
        .map_err(|e| invalid(e.to_string()))?;
    let config = RunConfig::resolve(fallback, file, args.flags());
    let plan = plan_for(verb, &config)?;
    let out_dir = config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&plan.session_id));
    let jobs = config.jobs.unwrap_or(1).max(1);
    let opts = RunOptions {
        out_dir: out_dir.clone(),
        jobs,
        timestamps: config.timestamps.unwrap_or(false),
    };
    let gateway = Gateway::new(jobs.max(2));
    let result = run_session(&plan, &gateway, &opts)?;

    let mut reports = Vec::new();
    let mut report_errors = Vec::new();
    if !args.no_reports {
        let log = Log::load(&result.log, &LogFilter::default())?;
        // in a bot series every participant after the first is a bot
        let bots: Vec<String> = if verb == "run-bots" {
            plan.participants[1..].iter().map(|p| p.id.clone()).collect()
        } else {
            Vec::new()
        };
        let dir = out_dir.join("reports");
        for kind in applicable_reports(&log) {
            match render_report(&log, kind, &bots, DEFAULT_CLUSTER_SEED) {
                Ok(csv) => {
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join(kind.file_name());
                    std::fs::write(&path, csv)?;
                    reports.push(path.display().to_string());
                }
                Err(e) => report_errors.push(format!("{}: {e}", kind.name())),
            }
        }
    }
    println!(
        "{}",
        summary(
            verb,
            json!({
                "session_id": result.session_id,
                "matches": result.matches,
                "completed": result.completed,
                "aborted": result.aborted,
                "rounds": result.rounds,
                "points": result.points,
                "out_dir": out_dir.display().to_string(),
                "manifest": result.manifest.display().to_string(),
                "log": result.log.display().to_string(),
                "reports": reports,
                "report_errors": report_errors,
            })
        )
    );
    Ok(())
}

fn load_log(input: &LogArgs) -> Result<Log, Failure> {
    if !input.log.exists() {
        return Err(invalid(format!("no such log: {}", input.log.display())));
    }
    Ok(input.load()?)
}

fn analyze(input: &LogArgs, kinds: &[ReportKind], out: Option<&Path>) -> Result<(), Failure> {
    let log = load_log(input)?;
    let kinds = if kinds.is_empty() {
        applicable_reports(&log)
    } else {
        kinds.to_vec()
    };
    if kinds.is_empty() {
        return Err(invalid("no report applies to this log"));
    }
    let mut written = Vec::new();
    for kind in &kinds {
        let csv = render_report(&log, *kind, &input.bots, input.seed)?;
        match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(kind.file_name());
                std::fs::write(&path, csv)?;
                written.push(path.display().to_string());
            }
            None => {
                if kinds.len() > 1 {
                    println!("# {}", kind.file_name());
                }
                print!("{csv}");
            }
        }
    }
    let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
    let line = summary(
        "analyze",
        json!({ "log": input.log.display().to_string(), "reports": names, "files": written }),
    );
    if out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(())
}

fn export(input: &LogArgs, out: &Path) -> Result<(), Failure> {
    let log = load_log(input)?;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut skipped = Vec::new();
    for kind in applicable_reports(&log) {
        match render_report(&log, kind, &input.bots, input.seed) {
            Ok(csv) => {
                let path = out.join(kind.file_name());
                std::fs::write(&path, csv)?;
                written.push(path.display().to_string());
            }
            Err(e) => skipped.push(format!("{}: {e}", kind.name())),
        }
    }
    // analytic payoffs for every ordered pair of transition bots involved
    let bot_names: Vec<String> = if input.bots.is_empty() {
        gamelab_core::analysis::default_bots(&log)
    } else {
        input.bots.clone()
    };
    let tables: Vec<_> = bot_names
        .iter()
        .filter_map(|n| match builtin(n).map(|a| a.kind) {
            Some(AgentKind::TransitionBot { table }) => Some((n.clone(), table)),
            _ => None,
        })
        .collect();
    if !tables.is_empty() {
        let m = gamelab_core::matrix::PayoffMatrix::rps_modified();
        let mut rows = Vec::new();
        for (a, ta) in &tables {
            for (b, tb) in &tables {
                let s = markov_stationary_payoffs(ta, tb, &m).map_err(Error::from)?;
                rows.push((a.clone(), b.clone(), s));
            }
        }
        let path = out.join("stationary.csv");
        let report = StationaryTable(&rows);
        let mut buf = Vec::new();
        write_csv(&report, &report.header(), &mut buf)?;
        std::fs::write(&path, buf)?;
        written.push(path.display().to_string());
    }
    println!(
        "{}",
        summary(
            "export",
            json!({ "log": input.log.display().to_string(), "files": written, "skipped": skipped })
        )
    );
    Ok(())
}

fn serve(addr: &str, data_dir: PathBuf, idle: u64, token_env: Option<String>, jobs: usize) -> Result<(), Failure> {
    use gamelab_service::{Service, ServiceConfig};
    let mut config = ServiceConfig::new(data_dir);
    config.idle_timeout = Duration::from_secs(idle.max(1));
    config.max_concurrent_calls = jobs.max(1);
    if let Some(var) = token_env {
        let token = std::env::var(&var).map_err(|_| invalid(format!("environment variable `{var}` is not set")))?;
        config.shared_token = Some(token);
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| invalid(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr()?;
        println!(
            "{}",
            summary(
                "serve",
                json!({ "listening": local.to_string(), "data_dir": config.data_dir.display().to_string() })
            )
        );
        gamelab_service::serve(listener, Service::new(config)).await?;
        Ok(())
    })
}

fn replay(run: &Path) -> Result<(), Failure> {
    if !run.join(gamelab_core::protocol::MANIFEST_FILE).exists() {
        return Err(invalid(format!("{} holds no run manifest", run.display())));
    }
    let r = replay_run(run)?;
    let mut fields = json!({
        "session_id": r.session_id,
        "matches": r.matches,
        "lines_compared": r.lines_compared,
        "identical": r.identical,
    });
    if let Some((line, recorded, regenerated)) = &r.first_difference {
        fields["first_difference"] = json!({ "line": line, "recorded": recorded, "regenerated": regenerated });
    }
    if r.identical {
        println!("{}", summary("replay", fields));
        Ok(())
    } else {
        eprintln!("{fields}");
        Err(Failure {
            code: 1,
            message: format!(
                "replay diverged at log line {}",
                r.first_difference.as_ref().map_or(0, |d| d.0)
            ),
        })
    }
}
