//! Drives the router in-process: creation, play, rejections, information
//! hiding, token checks and idle expiry.

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use gamelab_core::agents::builtin;
use gamelab_core::analysis::{analyze_rps, choice_proportions, cooperation_rates, Grouping};
use gamelab_core::gateway::prompt;
use gamelab_core::persistence::{read_envelopes, validate_envelope, Log, LogFilter, LOG_VERSION};
use gamelab_core::protocol::{ContinuationRule, Termination};
use gamelab_service::{router, serve, Service, ServiceConfig, TOKEN_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Harness {
    svc: Arc<Service>,
    dir: tempfile::TempDir,
    token: Option<String>,
}

impl Harness {
    fn new() -> Self {
        Self::with(|_| {})
    }

    fn with(tweak: impl FnOnce(&mut ServiceConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ServiceConfig::new(dir.path());
        config.timestamps = false;
        tweak(&mut config);
        let token = config.shared_token.clone();
        Harness {
            svc: Service::new(config),
            dir,
            token,
        }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = &self.token {
            req = req.header(TOKEN_HEADER, t);
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = router(self.svc.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (s, text) = self.call(method, uri, body).await;
        (s, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    async fn create(&self, body: Value) -> String {
        let (s, v) = self.json(Method::POST, "/sessions", Some(body)).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }

    async fn choose(&self, id: &str, slot: usize, action: &str) -> (StatusCode, Value) {
        self.json(
            Method::POST,
            &format!("/sessions/{id}/choices"),
            Some(json!({"slot": slot, "action": action})),
        )
        .await
    }

    async fn state(&self, id: &str, slot: usize) -> (StatusCode, String) {
        self.call(Method::GET, &format!("/sessions/{id}/state?slot={slot}"), None)
            .await
    }
}

fn messages(state: &str) -> Vec<String> {
    let v: Value = serde_json::from_str(state).unwrap();
    serde_json::from_value(v["view"]["messages"].clone()).unwrap()
}

#[tokio::test]
async fn rps_session_against_a_bot() {
    let h = Harness::new();
    let (s, v) = h
        .json(
            Method::POST,
            "/sessions",
            Some(json!({"session_id": "rps-1", "opponent": "wslu", "rounds": 5, "seed": 9})),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let first = &v["instructions"]["0"];
    assert_eq!(first[0], prompt::rps_system());
    assert_eq!(first[1], prompt::rps_decision(1));
    assert_eq!(v["summary"]["human_slots"], json!([0]));

    for round in 1..=5 {
        let (_, before) = h.state("rps-1", 0).await;
        assert_eq!(h.state("rps-1", 0).await.1, before, "reads are idempotent");
        let (s, out) = h.choose("rps-1", 0, "Paper").await;
        assert_eq!(s, StatusCode::OK, "{out}");
        assert_eq!(out["round_complete"], true);
        assert_eq!(out["match_finished"], round == 5);
        let (_, after) = h.state("rps-1", 0).await;
        let msgs = messages(&after);
        let feedback = if round < 5 {
            &msgs[msgs.len() - 2]
        } else {
            msgs.last().unwrap()
        };
        assert!(feedback.contains("Paper"), "{feedback}");
    }
    let (_, fin) = h.state("rps-1", 0).await;
    let fin: Value = serde_json::from_str(&fin).unwrap();
    assert_eq!(fin["phase"], "finished");
    assert_eq!(fin["view"]["available_actions"], json!([]));
    assert_eq!(fin["view"]["own_history"].as_array().unwrap().len(), 5);

    let (s, text) = h.call(Method::GET, "/sessions/rps-1/log", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        text.lines().count(),
        1 + 5 + messages(&serde_json::to_string(&fin).unwrap()).len() + 1
    );
    let path = h.dir.path().join("rps-1/log.jsonl");
    for env in read_envelopes(&path).unwrap() {
        assert_eq!(env.v, LOG_VERSION);
        validate_envelope(&env).unwrap();
    }
    assert!(h.dir.path().join("rps-1/manifest.json").exists());
    let log = Log::load(&path, &LogFilter::default()).unwrap();
    let p = choice_proportions(&log.rounds, "human").unwrap();
    assert_eq!(p.counts, [0, 5, 0]);
    analyze_rps(&log, 1).unwrap();

    let (s, again) = h.choose("rps-1", 0, "Rock").await;
    assert_eq!(s, StatusCode::CONFLICT, "{again}");
}

#[tokio::test]
async fn pd_dice_session_shows_the_die() {
    let h = Harness::new();
    let id = h
        .create(
            json!({"game": "pd", "opponent": "titfortat", "treatments": ["delta=0.75"], "repetitions": 2, "seed": 4}),
        )
        .await;
    let (_, st) = h.state(&id, 0).await;
    let rule = ContinuationRule::Dice { delta: 0.75 };
    let msgs = messages(&st);
    assert_eq!(msgs[1], prompt::pd_intro(&rule, 1, 2));
    assert!(msgs[1].contains("four sided dice"));
    assert_eq!(msgs[2], prompt::pd_new_match(&rule, gamelab_core::game::Role::Red));

    let (s, bad) = h.choose(&id, 0, "L").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "Red chooses U or D: {bad}");

    for m in 0..2 {
        loop {
            let (s, out) = h.choose(&id, 0, "U").await;
            assert_eq!(s, StatusCode::OK, "{out}");
            if out["match_finished"] == true {
                break;
            }
            let (_, st) = h.state(&id, 0).await;
            let msgs = messages(&st);
            assert!(msgs[msgs.len() - 1].contains("appeared therefore this match continues"));
        }
        let (_, st) = h.state(&id, 0).await;
        let v: Value = serde_json::from_str(&st).unwrap();
        let last = messages(&st).pop().unwrap();
        assert!(last.contains("appeared therefore this match ended"), "{last}");
        let rounds = v["view"]["own_history"].as_array().unwrap().len() as u64;
        assert_eq!(v["view"]["totals"], json!([65 * rounds, 65 * rounds]));
        if m == 0 {
            assert_eq!(v["phase"], "revealing_feedback");
            let (s, _) = h.choose(&id, 0, "U").await;
            assert_eq!(s, StatusCode::CONFLICT);
            let (s, adv) = h.json(Method::POST, &format!("/sessions/{id}/advance"), None).await;
            assert_eq!(s, StatusCode::OK);
            assert_eq!(adv["phase"], "awaiting_choices");
        } else {
            assert_eq!(v["phase"], "finished");
        }
    }
    let log = Log::load(h.dir.path().join(&id).join("log.jsonl"), &LogFilter::default()).unwrap();
    let coop = cooperation_rates(&log, Grouping::Treatment);
    assert_eq!(coop.rows.len(), 1);
    assert_eq!(coop.rows[0].percent, 100.0);
}

#[tokio::test]
async fn rejections() {
    let h = Harness::new();
    let (s, v) = h
        .json(
            Method::POST,
            "/sessions",
            Some(json!({"opponent": "wslu", "human_slot": 1, "rounds": 2})),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap().to_string();
    assert!(id.starts_with("live-"));

    // a plan without human seats belongs to the batch runner
    let mut plan: Value =
        serde_json::from_str(&std::fs::read_to_string(h.dir.path().join(&id).join("manifest.json")).unwrap()).unwrap();
    plan["plan"]["participants"][1]["agent"] = serde_json::to_value(builtin("wdls").unwrap()).unwrap();
    let (s, v) = h
        .json(Method::POST, "/sessions", Some(json!({"plan": plan["plan"]})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    assert!(v["error"].as_str().unwrap().contains("no human"), "{v}");

    let (s, _) = h
        .json(Method::POST, "/sessions", Some(json!({"opponent": "nobody"})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = h
        .json(
            Method::POST,
            "/sessions",
            Some(json!({"opponent": "wslu", "colour": 1})),
        )
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = h
        .json(
            Method::POST,
            "/sessions",
            Some(json!({"session_id": id, "opponent": "wslu"})),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = h
        .json(
            Method::POST,
            "/sessions",
            Some(json!({"session_id": "../x", "opponent": "wslu"})),
        )
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = h.choose(&id, 1, "Lizard").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("Rock, Paper, Scissors"), "{v}");
    let (s, _) = h.choose(&id, 0, "Rock").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = h.state(&id, 0).await;
    assert_eq!(s, StatusCode::FORBIDDEN, "the bot's seat is not readable");
    let (s, _) = h.choose("missing", 0, "Rock").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.state("missing", 0).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, _) = h.choose(&id, 1, "rock").await;
    assert_eq!(s, StatusCode::OK);

    let (s, list) = h.json(Method::GET, "/sessions", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);

    // stale sessions are gone
    let expired = h.svc.expire_idle(Instant::now() + Duration::from_secs(24 * 3600));
    assert_eq!(expired, vec![id.clone()]);
    let (s, _) = h.choose(&id, 1, "rock").await;
    assert_eq!(s, StatusCode::GONE);
    let (_, summary) = h.json(Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(summary["expired"], true);
    assert_eq!(summary["phase"], "finished");
    let log = Log::load(h.dir.path().join(&id).join("log.jsonl"), &LogFilter::default()).unwrap();
    let end = log.ends.values().next().unwrap();
    assert_eq!(end.termination, Termination::HumanAbandoned);
    assert_eq!(end.rounds, 1);
}

#[tokio::test]
async fn no_response_reveals_an_uncommitted_choice() {
    let h = Harness::new();
    let id = h.create(json!({"opponent": "human", "rounds": 3})).await;
    for round in 0..3 {
        let (_, before) = h.state(&id, 1).await;
        let (_, summary_before) = h.call(Method::GET, &format!("/sessions/{id}"), None).await;
        let (s, out) = h.choose(&id, 0, "Scissors").await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(out["round_complete"], false);
        assert_eq!(h.state(&id, 1).await.1, before, "round {round}");
        assert_eq!(
            h.call(Method::GET, &format!("/sessions/{id}"), None).await.1,
            summary_before
        );
        let (_, list) = h.call(Method::GET, "/sessions", None).await;
        assert!(!list.contains("Scissors"));
        let (_, own) = h.state(&id, 0).await;
        let own: Value = serde_json::from_str(&own).unwrap();
        assert_eq!(own["view"]["committed"], true);
        assert_eq!(own["view"]["available_actions"], json!([]));
        let (s, out) = h.choose(&id, 1, "Rock").await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(out["round_complete"], true);
        let (_, after) = h.state(&id, 1).await;
        let after: Value = serde_json::from_str(&after).unwrap();
        assert_eq!(after["view"]["opponent_history"].as_array().unwrap().len(), round + 1);
    }
}

#[tokio::test]
async fn model_opponents_run_through_the_gateway() {
    let h = Harness::new();
    let id = h
        .create(json!({
            "opponent": "mock",
            "rounds": 4,
            "endpoints": {"mock": {"model": "m", "backend": {"type": "mock", "mode": {"mode": "uniform", "seed": 3}}}}
        }))
        .await;
    for _ in 0..4 {
        let (s, out) = h.choose(&id, 0, "Rock").await;
        assert_eq!(s, StatusCode::OK, "{out}");
    }
    let log = Log::load(h.dir.path().join(&id).join("log.jsonl"), &LogFilter::default()).unwrap();
    assert_eq!(log.rounds.len(), 4);
    // both conversations are logged; the model's replies never reach the human's view
    assert!(log
        .messages
        .iter()
        .any(|(_, m)| m.slot == 1 && m.text.contains("Choice:")));
    let (_, st) = h.state(&id, 0).await;
    assert!(!st.contains("I pick uniformly"));
}

#[tokio::test]
async fn shared_token_is_enforced() {
    let mut h = Harness::with(|c| c.shared_token = Some("letmein".into()));
    let (s, _) = h.json(Method::GET, "/sessions", None).await;
    assert_eq!(s, StatusCode::OK);
    h.token = Some("wrong".into());
    let (s, v) = h.json(Method::GET, "/sessions", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert!(!v.to_string().contains("letmein"));
    h.token = None;
    let (s, _) = h
        .json(Method::POST, "/sessions", Some(json!({"opponent": "wslu"})))
        .await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn idle_sessions_expire_in_the_background() {
    let h = Harness::with(|c| c.idle_timeout = Duration::from_millis(100));
    let id = h.create(json!({"opponent": "wslu", "rounds": 3})).await;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let server = tokio::spawn(serve(listener, h.svc.clone()));
    let mut expired = false;
    for _ in 0..100 {
        tokio::time::sleep(Duration::from_millis(20)).await;
        if h.svc.summary(&id).unwrap().expired {
            expired = true;
            break;
        }
    }
    server.abort();
    assert!(expired);
    let log = Log::load(h.dir.path().join(&id).join("log.jsonl"), &LogFilter::default()).unwrap();
    assert!(log.ends.values().all(|e| e.termination == Termination::HumanAbandoned));
}
