use af_core::gateway::http::HttpTransport;
use af_core::gateway::{
    Auth, ChatRequest, Completion, Endpoint, Gateway, GatewayError, Message, Registry, RetryPolicy,
    Transport, TransportError,
};
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

#[derive(Default)]
struct ServerState {
    hits: AtomicUsize,
    fail_first: usize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    delay_ms: u64,
}

async fn completions(
    State(s): State<Arc<ServerState>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let n = s.hits.fetch_add(1, Ordering::SeqCst);
    let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    s.max_in_flight.fetch_max(now, Ordering::SeqCst);
    if s.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(s.delay_ms)).await;
    }
    s.in_flight.fetch_sub(1, Ordering::SeqCst);
    if n < s.fail_first {
        return (
            StatusCode::TOO_MANY_REQUESTS,
            Json(json!({"error": "slow down"})),
        );
    }
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let prompt = body["messages"][0]["content"].to_string();
    (
        StatusCode::OK,
        Json(json!({
            "choices": [{"message": {"role": "assistant", "content": format!("echo {prompt} auth={auth}")}}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 3}
        })),
    )
}

fn spawn_server(state: ServerState) -> (SocketAddr, Arc<ServerState>) {
    let state = Arc::new(state);
    let shared = state.clone();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/v1/chat/completions", post(completions))
                .with_state(shared);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), state)
}

fn registry(base_url: String) -> Registry {
    let mut r = Registry::default();
    r.insert(
        "model",
        Endpoint {
            base_url,
            model: "test-model".into(),
            auth: Auth::Bearer {
                token: "sekrit".into(),
            },
        },
    );
    r
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
    }
}

fn http_gateway(base_url: String, retries: u32) -> af_core::gateway::GatewayBuilder {
    Gateway::builder(Arc::new(
        HttpTransport::new(Duration::from_secs(5)).unwrap(),
    ))
    .registry(registry(base_url))
    .retry(fast_retry(retries))
}

#[test]
fn retry_after_429_then_success() {
    let (addr, state) = spawn_server(ServerState {
        fail_first: 1,
        ..Default::default()
    });
    let g = http_gateway(format!("http://{addr}"), 3).build();
    let resp = g
        .chat(&ChatRequest::new("model", vec![Message::user("hello")]))
        .unwrap();
    assert!(resp.text.contains("hello"));
    assert!(resp.text.contains("auth=Bearer sekrit"));
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (7, 3));
    assert_eq!(state.hits.load(Ordering::SeqCst), 2);
    assert_eq!(g.stats().retries, 1);
}

#[test]
fn persistent_429_exhausts_retries() {
    let (addr, state) = spawn_server(ServerState {
        fail_first: 100,
        ..Default::default()
    });
    let g = http_gateway(format!("http://{addr}/v1"), 2).build();
    let err = g
        .chat(&ChatRequest::new("model", vec![Message::user("x")]))
        .unwrap_err();
    assert!(
        matches!(err, GatewayError::RetriesExhausted { attempts: 3, .. }),
        "{err:?}"
    );
    assert_eq!(state.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn cache_returns_identical_response() {
    let (addr, state) = spawn_server(ServerState::default());
    let dir = tempfile::tempdir().unwrap();
    let g = http_gateway(format!("http://{addr}"), 0)
        .cache_dir(Some(dir.path()))
        .unwrap()
        .build();
    let req = ChatRequest::new("model", vec![Message::user("same question")]);
    let a = g.chat(&req).unwrap();
    let b = g.chat(&req).unwrap();
    assert!(!a.cached && b.cached);
    assert_eq!(a.text, b.text);
    assert_eq!(state.hits.load(Ordering::SeqCst), 1);

    // survives a fresh handle over the same directory
    let g2 = http_gateway(format!("http://{addr}"), 0)
        .cache_dir(Some(dir.path()))
        .unwrap()
        .build();
    assert_eq!(g2.chat(&req).unwrap().text, a.text);
    assert_eq!(state.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_host() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let g = http_gateway(format!("http://{addr}"), 2).build();
    let err = g
        .chat(&ChatRequest::new("model", vec![Message::user("x")]))
        .unwrap_err();
    assert!(
        matches!(err, GatewayError::EndpointUnreachable { .. }),
        "{err:?}"
    );
    assert!(err.is_external());
    assert_eq!(g.stats().transport_calls, 3);
}

#[test]
fn http_in_flight_bounded() {
    let (addr, state) = spawn_server(ServerState {
        delay_ms: 40,
        ..Default::default()
    });
    let g = http_gateway(format!("http://{addr}"), 0)
        .concurrency(3)
        .build();
    std::thread::scope(|s| {
        for i in 0..12 {
            let g = &g;
            s.spawn(move || {
                g.chat(&ChatRequest::new(
                    "model",
                    vec![Message::user(format!("q{i}"))],
                ))
                .unwrap()
            });
        }
    });
    assert_eq!(state.hits.load(Ordering::SeqCst), 12);
    assert!(state.max_in_flight.load(Ordering::SeqCst) <= 3);
}

struct Counting {
    now: AtomicUsize,
    peak: AtomicUsize,
}

impl Transport for Counting {
    fn send(&self, _: &Endpoint, req: &ChatRequest) -> Result<Completion, TransportError> {
        let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(n, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(10));
        self.now.fetch_sub(1, Ordering::SeqCst);
        Ok(Completion {
            text: req.messages[0].text_content(),
            prompt_tokens: 1,
            completion_tokens: 1,
        })
    }
}

#[test]
fn counting_double_respects_limit_per_endpoint() {
    let t = Arc::new(Counting {
        now: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    let mut reg = registry("http://unused".into());
    reg.insert(
        "other",
        Endpoint {
            base_url: "http://unused".into(),
            model: "m".into(),
            auth: Auth::None,
        },
    );
    for limit in [1usize, 2, 5] {
        t.peak.store(0, Ordering::SeqCst);
        let g = Gateway::builder(t.clone())
            .registry(reg.clone())
            .concurrency(limit)
            .build();
        std::thread::scope(|s| {
            for i in 0..20 {
                let g = &g;
                s.spawn(move || {
                    g.chat(&ChatRequest::new(
                        "model",
                        vec![Message::user(format!("{i}"))],
                    ))
                    .unwrap()
                });
            }
        });
        assert!(t.peak.load(Ordering::SeqCst) <= limit, "limit {limit}");
        assert_eq!(t.peak.load(Ordering::SeqCst), limit.min(20));
    }
}

#[test]
fn unknown_endpoint_without_default() {
    let g = http_gateway("http://127.0.0.1:9".into(), 0).build();
    let err = g
        .chat(&ChatRequest::new("nope", vec![Message::user("x")]))
        .unwrap_err();
    assert_eq!(err, GatewayError::UnknownEndpoint("nope".into()));
}
