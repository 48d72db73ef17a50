use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use ctxbroker::qoc::IndicatorCatalog;
use ctxbroker::service::delivery::{HttpSink, RetryPolicy};
use ctxbroker::service::wire::WireEnvelope;
use ctxbroker::service::{serve_with, HttpUpstream, ServiceHandle};
use serde_json::{json, Value};
use tokio::net::TcpListener;

fn catalog() -> IndicatorCatalog {
    IndicatorCatalog::new(vec!["freshness".into()], vec!["availability".into()]).unwrap()
}

async fn broker(persist: Option<std::path::PathBuf>) -> ServiceHandle {
    let timeout = Duration::from_secs(2);
    let policy = RetryPolicy { attempts: 3, initial_backoff_ms: 10, multiplier: 2.0 };
    serve_with(
        "127.0.0.1:0",
        catalog(),
        persist,
        policy,
        Arc::new(HttpSink::new(timeout)),
        Arc::new(HttpUpstream::new(timeout)),
    )
    .await
    .unwrap()
}

type Inbox = (Arc<Mutex<Vec<WireEnvelope>>>, Arc<AtomicUsize>);

/// Callback endpoint that refuses the first `fail_first` pushes.
struct Consumer {
    url: String,
    received: Arc<Mutex<Vec<WireEnvelope>>>,
    attempts: Arc<AtomicUsize>,
}

async fn consumer(fail_first: usize) -> Consumer {
    let received = Arc::new(Mutex::new(Vec::new()));
    let attempts = Arc::new(AtomicUsize::new(0));
    let state = (Arc::clone(&received), Arc::clone(&attempts));
    let app = Router::new()
        .route(
            "/cb",
            post(
                move |State((rx, n)): State<Inbox>, Json(env): Json<WireEnvelope>| async move {
                    if n.fetch_add(1, Ordering::SeqCst) < fail_first {
                        return StatusCode::SERVICE_UNAVAILABLE;
                    }
                    rx.lock().unwrap().push(env);
                    StatusCode::OK
                },
            ),
        )
        .with_state(state);
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Consumer { url: format!("http://{addr}/cb"), received, attempts }
}

fn offer(id: &str) -> Value {
    json!({"service_id": id, "cloud_id": "a", "offered_topics": ["loc"], "qoc_offer": {"loc": [0.9]}, "qos_offer": [0.99]})
}

fn profile() -> Value {
    json!({"topics": ["loc"], "qoc_min": [[0.5]], "qos_min": [0.9]})
}

async fn wait_idle(handle: &ServiceHandle) {
    tokio::time::timeout(Duration::from_secs(5), handle.service.dispatcher().wait_idle())
        .await
        .expect("pushes drained");
}

#[tokio::test]
async fn status_codes_and_request_ids() {
    let handle = broker(None).await;
    let base = handle.base_url();
    let http = reqwest::Client::new();

    let resp = http
        .post(format!("{base}/subscriptions"))
        .header("x-request-id", "abc")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    let env: WireEnvelope = resp.json().await.unwrap();
    assert_eq!(env.request_id, "abc");
    assert_eq!(env.body["code"], "BAD_REQUEST");

    let resp = http.delete(format!("{base}/subscriptions/sub-9")).send().await.unwrap();
    assert_eq!(resp.status(), 404);

    let sample = json!({"topic": "loc", "payload": "x", "produced_at": 1, "service_id": "ghost"});
    let resp = http.post(format!("{base}/notify")).json(&sample).send().await.unwrap();
    assert_eq!(resp.status(), 403);
    let env: WireEnvelope = resp.json().await.unwrap();
    assert_eq!(env.body["code"], "UNREGISTERED");

    let body = json!({"consumer_id": "c1", "profile": profile(), "callback_address": "http://127.0.0.1:9/cb"});
    let env: WireEnvelope = http.post(format!("{base}/subscriptions")).json(&body).send().await.unwrap().json().await.unwrap();
    let sub = env.body["subscription_id"].as_str().unwrap().to_string();

    let resp = http.get(format!("{base}/subscriptions/{sub}/topics/loc/current")).send().await.unwrap();
    assert_eq!(resp.status(), 503);
    let env: WireEnvelope = resp.json().await.unwrap();
    assert_eq!(env.body["code"], "NO_PROVIDER");
    assert_eq!(env.body["topics"], json!(["loc"]));

    let resp = http.get(format!("{base}/subscriptions/{sub}/topics/temp/last")).send().await.unwrap();
    assert_eq!(resp.status(), 422);

    // Registered provider whose address does not answer.
    let body = json!({"offer": offer("s1"), "service_address": "http://127.0.0.1:9"});
    let resp = http.post(format!("{base}/registrations")).json(&body).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    let resp = http.post(format!("{base}/registrations")).json(&body).send().await.unwrap();
    assert_eq!(resp.status(), 409);
    let resp = http.get(format!("{base}/subscriptions/{sub}/topics/loc/current")).send().await.unwrap();
    assert_eq!(resp.status(), 502);
    let resp = http.get(format!("{base}/subscriptions/{sub}/topics/loc/last")).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    let env: WireEnvelope = resp.json().await.unwrap();
    assert_eq!(env.body["code"], "NO_VALUE_YET");

    let services: WireEnvelope = http.get(format!("{base}/topics/loc/services")).send().await.unwrap().json().await.unwrap();
    assert_eq!(services.body, json!(["s1"]));
    let consumers: WireEnvelope = http.get(format!("{base}/topics/loc/consumers")).send().await.unwrap().json().await.unwrap();
    assert_eq!(consumers.body, json!([sub]));

    let env: WireEnvelope = http
        .post(format!("{base}/rpc"))
        .json(&json!({"kind": "shout", "request_id": "q1", "body": {}}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!((env.request_id.as_str(), env.body["code"].as_str()), ("q1", Some("BAD_REQUEST")));

    handle.shutdown().await;
}

#[tokio::test]
async fn notification_survives_two_refused_pushes() {
    let handle = broker(None).await;
    let base = handle.base_url();
    let http = reqwest::Client::new();
    let consumer = consumer(2).await;

    let body = json!({"offer": offer("s1"), "service_address": "http://127.0.0.1:9"});
    http.post(format!("{base}/registrations")).json(&body).send().await.unwrap();
    let body = json!({"consumer_id": "c1", "profile": profile(), "callback_address": consumer.url});
    http.post(format!("{base}/subscriptions")).json(&body).send().await.unwrap();

    let sample = json!({"topic": "loc", "payload": "here", "produced_at": 1, "service_id": "s1"});
    let resp = http.post(format!("{base}/notify")).json(&sample).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    wait_idle(&handle).await;

    assert_eq!(consumer.attempts.load(Ordering::SeqCst), 3);
    let got = consumer.received.lock().unwrap().clone();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].body["sample"]["payload"], "here");
    assert_eq!(handle.service.dispatcher().delivered(), 1);
    assert_eq!(handle.service.dispatcher().dropped(), 0);
    handle.shutdown().await;
}

#[tokio::test]
async fn unreachable_consumer_is_dropped_after_three_attempts() {
    let handle = broker(None).await;
    let base = handle.base_url();
    let http = reqwest::Client::new();
    let consumer = consumer(usize::MAX).await;

    let body = json!({"offer": offer("s1"), "service_address": "http://127.0.0.1:9"});
    http.post(format!("{base}/registrations")).json(&body).send().await.unwrap();
    let body = json!({"consumer_id": "c1", "profile": profile(), "callback_address": consumer.url});
    http.post(format!("{base}/subscriptions")).json(&body).send().await.unwrap();
    let sample = json!({"topic": "loc", "payload": "here", "produced_at": 1, "service_id": "s1"});
    http.post(format!("{base}/notify")).json(&sample).send().await.unwrap();
    wait_idle(&handle).await;

    assert_eq!(consumer.attempts.load(Ordering::SeqCst), 3);
    assert_eq!(handle.service.dispatcher().dropped(), 1);
    let health: Value = http.get(format!("{base}/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health["dropped"], 1);
    assert_eq!(health["pending_deliveries"], 0);
    handle.shutdown().await;
}

#[tokio::test]
async fn restart_from_snapshot_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broker.json");
    let http = reqwest::Client::new();

    let handle = broker(Some(path.clone())).await;
    let base = handle.base_url();
    let body = json!({"offer": offer("s1"), "service_address": "http://127.0.0.1:9"});
    http.post(format!("{base}/registrations")).json(&body).send().await.unwrap();
    let body = json!({"consumer_id": "c1", "profile": profile(), "callback_address": "http://127.0.0.1:9/cb"});
    let env: WireEnvelope = http.post(format!("{base}/subscriptions")).json(&body).send().await.unwrap().json().await.unwrap();
    let sub = env.body["subscription_id"].as_str().unwrap().to_string();
    let before: WireEnvelope = http.get(format!("{base}/subscriptions/{sub}/decision")).send().await.unwrap().json().await.unwrap();
    handle.shutdown().await;

    let handle = broker(Some(path)).await;
    let base = handle.base_url();
    let after: WireEnvelope = http.get(format!("{base}/subscriptions/{sub}/decision")).send().await.unwrap().json().await.unwrap();
    assert_eq!(before.body, after.body);
    assert_eq!(after.body["decision"]["selected"], json!(["s1"]));
    handle.shutdown().await;
}
