//! HTTP backend against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use flywheel_core::backend::{
    BackendError, GenerationParams, HttpBackend, HttpConfig, ModelBackend, ModelRef, ScoreKind,
    Scorer,
};
use serde_json::Value;

struct Seen {
    path: String,
    body: Value,
}

/// Serves one canned (status, body) per connection, in order, and reports
/// each request it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let body = serde_json::from_slice(&buf).unwrap_or(Value::Null);
            let _ = tx.send(Seen { path, body });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (base, rx)
}

fn backend(retries: u32) -> HttpBackend {
    HttpBackend::new(HttpConfig {
        api_key_env: None,
        timeout_secs: 10,
        max_retries: retries,
        backoff_base_ms: 1,
        log_path: None,
    })
    .unwrap()
}

fn chat_reply(text: &str, finish: &str) -> String {
    serde_json::json!({"choices": [{"message": {"content": text}, "finish_reason": finish}]}).to_string()
}

#[test]
fn chat_request_carries_sampling_constants() {
    let (base, rx) = serve(vec![(200, chat_reply("hello", "stop"))]);
    let m = ModelRef::http(&base, "policy");
    let out = backend(0).generate(&m, "Say hi", &GenerationParams::default()).unwrap();
    assert_eq!(out.text, "hello");
    assert!(!out.truncated);
    let seen = rx.recv().unwrap();
    assert_eq!(seen.path, "/chat/completions");
    assert_eq!(seen.body["temperature"], 0.7);
    assert_eq!(seen.body["max_tokens"], 2048);
    assert_eq!(seen.body["model"], "policy");
    assert_eq!(seen.body["messages"][0]["content"], "Say hi");
}

#[test]
fn length_finish_is_flagged_truncated() {
    let (base, _rx) = serve(vec![(200, chat_reply("partial", "length"))]);
    let out = backend(0)
        .generate(&ModelRef::http(&base, "p"), "x", &GenerationParams::default())
        .unwrap();
    assert!(out.truncated);
}

#[test]
fn server_errors_are_retried() {
    let (base, rx) = serve(vec![
        (500, "{}".into()),
        (503, "{}".into()),
        (200, chat_reply("ok", "stop")),
    ]);
    let out = backend(3)
        .generate(&ModelRef::http(&base, "p"), "x", &GenerationParams::default())
        .unwrap();
    assert_eq!(out.text, "ok");
    assert_eq!(rx.try_iter().count(), 3);
}

#[test]
fn retries_are_bounded() {
    let (base, _rx) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    let err = backend(1)
        .generate(&ModelRef::http(&base, "p"), "x", &GenerationParams::default())
        .unwrap_err();
    assert!(matches!(err, BackendError::Transport { attempts: 2, .. }), "{err:?}");
}

#[test]
fn client_errors_are_not_retried() {
    let (base, rx) = serve(vec![(400, "bad".into())]);
    let err = backend(3)
        .generate(&ModelRef::http(&base, "p"), "x", &GenerationParams::default())
        .unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 400, .. }), "{err:?}");
    assert_eq!(rx.try_iter().count(), 1);
}

#[test]
fn pairwise_score_round_trip() {
    let (base, rx) = serve(vec![(200, r#"{"scores":[1.25]}"#.into())]);
    let scorer = Scorer {
        kind: ScoreKind::Pairwise,
        model: ModelRef::http(&base, "judge"),
    };
    let r = backend(0).score_pair(&scorer, "q", "a", "b").unwrap();
    assert_eq!(r.value, 1.25);
    let seen = rx.recv().unwrap();
    assert_eq!(seen.path, "/score");
    assert_eq!(seen.body["responses"], serde_json::json!(["a", "b"]));
}

#[test]
fn embeddings_decode() {
    let (base, _rx) = serve(vec![(200, r#"{"data":[{"embedding":[0.5,-1.0]}]}"#.into())]);
    let v = backend(0).embed(&ModelRef::http(&base, "emb"), "text").unwrap();
    assert_eq!(v, vec![0.5, -1.0]);
}
