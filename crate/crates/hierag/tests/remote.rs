mod common;

use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{Reply, StubServer};
use hierag::remote::{Credential, HttpSettings, RemoteEmbedder, RemoteLlm, RetryPolicy};
use hierag_core::embed::{EmbedBackend, EmbedError};
use hierag_core::llm::{GenRequest, LlmBackend, LlmError, Route};
use serde_json::json;

const SECRET: &str = "sk-test-0123456789abcdef";

fn settings(url: &str, retries: u32) -> HttpSettings {
    let mut s = HttpSettings::new(url, "stub-model");
    s.retry = RetryPolicy {
        max_retries: retries,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
    };
    s.timeout = Duration::from_secs(5);
    s
}

fn llm(url: &str, retries: u32) -> RemoteLlm {
    RemoteLlm::new(settings(url, retries), Credential::new(SECRET), 8192).unwrap()
}

fn request() -> GenRequest {
    GenRequest {
        system_prompt: "system".into(),
        user_prompt: "Summarize this file.".into(),
        max_output_tokens: 64,
        temperature: 0.0,
        route: Route::default(),
    }
}

fn closed_port_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/v1")
}

#[test]
fn success_parses_content_and_usage() {
    let server = StubServer::start(|req| {
        assert_eq!(req.path, "/v1/chat/completions");
        assert_eq!(req.headers["authorization"], format!("Bearer {SECRET}"));
        let v = req.json();
        assert_eq!(v["model"], "stub-model");
        assert_eq!(v["messages"][1]["content"], "Summarize this file.");
        Reply::json(json!({
            "choices": [{"message": {"content": "A summary."}}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 2}
        }))
    });
    let r = llm(&server.url, 0).generate(&request()).unwrap();
    assert_eq!(r.text, "A summary.");
    assert_eq!(r.usage.prompt_tokens, 7);
    assert_eq!(r.usage.completion_tokens, 2);
    assert_eq!(llm(&server.url, 0).backend_id(), "openai:stub-model");
}

#[test]
fn unreachable_after_retries() {
    let url = closed_port_url();
    let err = llm(&url, 2).generate(&request()).unwrap_err();
    match &err {
        LlmError::BackendUnreachable { attempts, .. } => assert_eq!(*attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
    assert!(!err.to_string().contains(SECRET));
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let server = StubServer::start(move |_| {
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            Reply::status(503, r#"{"error":"busy"}"#)
        } else {
            Reply::json(json!({"choices": [{"message": {"content": "ok"}}]}))
        }
    });
    let r = llm(&server.url, 3).generate(&request()).unwrap();
    assert_eq!(r.text, "ok");
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let server =
        StubServer::start(|_| Reply::status(401, &format!(r#"{{"error":"bad key {SECRET}"}}"#)));
    let err = llm(&server.url, 3).generate(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Auth(_)), "{err:?}");
    assert_eq!(server.hits(), 1);
    let text = err.to_string();
    assert!(!text.contains(SECRET), "{text}");
    assert!(text.contains("[redacted]"), "{text}");
}

#[test]
fn rate_limit_exhausts_retries() {
    let server = StubServer::start(|_| Reply::status(429, "{}"));
    let err = llm(&server.url, 2).generate(&request()).unwrap_err();
    assert_eq!(err, LlmError::RateLimited { attempts: 3 });
    assert_eq!(server.hits(), 3);
}

#[test]
fn malformed_bodies() {
    let server = StubServer::start(|_| Reply::status(200, "not json"));
    let err = llm(&server.url, 2).generate(&request()).unwrap_err();
    assert!(matches!(err, LlmError::MalformedResponse(_)), "{err:?}");
    assert_eq!(server.hits(), 1);

    let server = StubServer::start(|_| Reply::json(json!({"choices": []})));
    let err = llm(&server.url, 0).generate(&request()).unwrap_err();
    assert!(matches!(err, LlmError::MalformedResponse(_)), "{err:?}");
}

#[test]
fn credential_debug_is_redacted() {
    let c = Credential::new(SECRET);
    assert!(!format!("{c:?}").contains(SECRET));
}

#[test]
fn embeddings_round_trip_and_dimension_check() {
    let server = StubServer::start(|req| {
        assert_eq!(req.path, "/v1/embeddings");
        let n = req.json()["input"].as_str().unwrap_or("").len() as f64;
        Reply::json(json!({"data": [{"embedding": [1.0, n, 0.5]}]}))
    });
    let e =
        RemoteEmbedder::new(settings(&server.url, 0), Credential::new(SECRET), Some(3)).unwrap();
    assert_eq!(e.backend_id(), "openai:stub-model");
    assert_eq!(e.embed("abcd").unwrap().values(), &[1.0, 4.0, 0.5]);

    let wrong =
        RemoteEmbedder::new(settings(&server.url, 0), Credential::new(SECRET), Some(8)).unwrap();
    assert_eq!(
        wrong.embed("x").unwrap_err(),
        EmbedError::DimensionMismatch {
            expected: 8,
            got: 3
        }
    );
}

#[test]
fn concurrent_requests_respect_inflight_limit() {
    let live = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (l, p) = (live.clone(), peak.clone());
    let server = StubServer::start(move |_| {
        let now = l.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(30));
        l.fetch_sub(1, Ordering::SeqCst);
        Reply::json(json!({"choices": [{"message": {"content": "x"}}]}))
    });
    let mut s = settings(&server.url, 0);
    s.max_inflight = 2;
    let backend = RemoteLlm::new(s, Credential::new(SECRET), 8192).unwrap();
    std::thread::scope(|scope| {
        for _ in 0..6 {
            scope.spawn(|| backend.generate(&request()).unwrap());
        }
    });
    assert_eq!(server.hits(), 6);
    assert!(peak.load(Ordering::SeqCst) <= 2);
}
