//! Runs matches against a local fake chat-completion server and checks the
//! wire format, retry policy and that credentials never reach disk.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use gamelab_core::agents::{builtin, AgentKind, AgentSpec};
use gamelab_core::gateway::{Gateway, ModelEndpoint};
use gamelab_core::persistence::{Log, LogFilter};
use gamelab_core::protocol::{plan_bot_series, run_session, RunOptions, Termination};
use serde_json::{json, Value};

#[derive(Clone, Debug)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Reply chosen per request: (HTTP status, assistant text).
type Responder = Box<dyn Fn(usize, &Value) -> (u16, String) + Send + Sync>;

struct FakeServer {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut len = 0;
    let mut auth = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        match k.to_ascii_lowercase().as_str() {
            "content-length" => len = v.trim().parse().ok()?,
            "authorization" => auth = Some(v.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(Seen {
        path,
        auth,
        body: serde_json::from_slice(&body).ok()?,
    })
}

fn serve(responder: Responder) -> FakeServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some(req) = read_request(&mut stream) else { continue };
            let n = {
                let mut s = log.lock().unwrap();
                s.push(req.clone());
                s.len()
            };
            let (status, text) = responder(n, &req.body);
            let payload = if status == 200 {
                json!({"choices": [{"message": {"role": "assistant", "content": text}}], "usage": {"total_tokens": 7}})
            } else {
                json!({"error": {"message": text}})
            }
            .to_string();
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    FakeServer { url, seen }
}

fn llm(url: &str, token_env: Option<&str>) -> AgentSpec {
    let mut ep = ModelEndpoint::http(url, "fake-model", token_env.map(String::from));
    ep.backoff_ms = 1;
    AgentSpec::new("fake", AgentKind::Llm { endpoint: ep })
}

fn run(
    agent: &AgentSpec,
    rounds: usize,
) -> (
    tempfile::TempDir,
    gamelab_core::Result<gamelab_core::protocol::RunSummary>,
) {
    let plan = plan_bot_series(agent, &[builtin("wslu").unwrap()], 1, rounds)
        .unwrap()
        .with_seed(3);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out_dir: dir.path().to_path_buf(),
        jobs: 1,
        timestamps: false,
    };
    let res = run_session(&plan, &Gateway::new(2), &opts);
    (dir, res)
}

#[test]
fn wire_format_and_token_hygiene() {
    const TOKEN: &str = "sk-test-do-not-log-4f9a";
    std::env::set_var("GAMELAB_FAKE_TOKEN", TOKEN);
    let server = serve(Box::new(|_, _| (200, "Reasoning omitted.\nChoice: Paper".into())));
    let (dir, res) = run(&llm(&server.url, Some("GAMELAB_FAKE_TOKEN")), 3);
    let summary = res.unwrap();
    assert_eq!(summary.completed, 1);

    let seen = server.seen.lock().unwrap().clone();
    assert_eq!(seen.len(), 3);
    for (i, s) in seen.iter().enumerate() {
        assert_eq!(s.path, "/v1/chat/completions");
        assert_eq!(s.auth.as_deref(), Some(format!("Bearer {TOKEN}").as_str()));
        assert_eq!(s.body["model"], "fake-model");
        assert_eq!(s.body["temperature"], 1.0);
        let msgs = s.body["messages"].as_array().unwrap();
        assert_eq!(msgs[0]["role"], "system");
        assert_eq!(msgs.last().unwrap()["role"], "user");
        // full history: system, then (prompt, reply, feedback) per earlier round, then the new prompt
        assert_eq!(msgs.len(), 2 + 3 * i, "request {i}");
        for m in msgs {
            assert!(m["content"].is_string());
            assert_eq!(m.as_object().unwrap().len(), 2);
        }
    }

    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!text.contains(TOKEN));
    }
    let log = Log::load(&summary.log, &LogFilter::default()).unwrap();
    assert!(log.messages.iter().any(|(_, m)| m.text.contains("Choice: Paper")));
}

#[test]
fn server_errors_are_retried() {
    let server = serve(Box::new(|n, _| {
        if n == 1 {
            (503, "overloaded".into())
        } else {
            (200, "Choice: Rock".into())
        }
    }));
    let (_dir, res) = run(&llm(&server.url, None), 1);
    assert_eq!(res.unwrap().completed, 1);
    assert_eq!(server.seen.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_fail_without_retry() {
    let server = serve(Box::new(|_, _| (401, "bad key".into())));
    let (_dir, res) = run(&llm(&server.url, None), 1);
    let err = res.unwrap_err().to_string();
    assert!(err.contains("401"), "{err}");
    assert_eq!(server.seen.lock().unwrap().len(), 1);
}

#[test]
fn unparsable_replies_abort_the_match_after_reasks() {
    let server = serve(Box::new(|_, _| (200, "I would rather not say.".into())));
    let (_dir, res) = run(&llm(&server.url, None), 2);
    let summary = res.unwrap();
    assert_eq!(summary.aborted, 1);
    let seen = server.seen.lock().unwrap().clone();
    assert_eq!(seen.len(), 4);
    // each re-ask carries the rejected reply and a format reminder
    let last = seen[3].body["messages"].as_array().unwrap();
    assert_eq!(last[last.len() - 2]["content"], "I would rather not say.");
    let log = Log::load(&summary.log, &LogFilter::default()).unwrap();
    let end = log.ends.values().next().unwrap();
    assert_eq!(end.termination, Termination::ProtocolViolation);
    assert!(end.aborted);
}

#[test]
fn missing_token_variable_is_reported_by_name() {
    let server = serve(Box::new(|_, _| (200, "Choice: Rock".into())));
    let (_dir, res) = run(&llm(&server.url, Some("GAMELAB_UNSET_TOKEN_VAR")), 1);
    let err = res.unwrap_err().to_string();
    assert!(err.contains("GAMELAB_UNSET_TOKEN_VAR"), "{err}");
    assert!(server.seen.lock().unwrap().is_empty());
}
