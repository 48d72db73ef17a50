//! HTTP surface. Each route turns the request into a [`WireEnvelope`] and
//! answers with the envelope returned by [`BrokerService::handle_request`].
//!
//! | method | path | kind |
//! |---|---|---|
//! | POST | `/subscriptions` | subscribe |
//! | DELETE | `/subscriptions/{id}` | unsubscribe |
//! | POST | `/registrations` | register |
//! | DELETE | `/registrations/{id}` | deregister |
//! | POST | `/notify` | notify |
//! | GET | `/subscriptions/{id}/topics/{topic}/current` | pull-current |
//! | GET | `/subscriptions/{id}/topics/{topic}/last` | pull-last |
//! | GET | `/topics/{topic}/services` | find-services |
//! | GET | `/topics/{topic}/consumers` | find-consumers |
//! | GET | `/subscriptions/{id}/decision` | decision |
//! | POST | `/rpc` | any envelope |
//! | GET | `/health` | revision and pending pushes |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::config::ServiceConfig;
use super::delivery::{CallbackSink, HttpSink, RetryPolicy};
use super::wire::{ErrorBody, Kind, WireEnvelope};
use super::{BrokerService, HttpUpstream, ServiceError, Upstream};
use crate::broker::ErrorCode;
use crate::qoc::IndicatorCatalog;

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Clone)]
struct AppState {
    service: Arc<BrokerService>,
    next_request: Arc<AtomicU64>,
}

impl AppState {
    fn request_id(&self, headers: &HeaderMap) -> String {
        headers
            .get(REQUEST_ID_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
            .unwrap_or_else(|| format!("req-{}", self.next_request.fetch_add(1, Ordering::SeqCst) + 1))
    }

    async fn run(&self, kind: Kind, rid: String, body: Value) -> Response {
        let resp = self
            .service
            .handle_request(WireEnvelope { kind, request_id: rid, body })
            .await;
        envelope_response(resp)
    }
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
        ErrorCode::NotFound => StatusCode::NOT_FOUND,
        ErrorCode::Conflict => StatusCode::CONFLICT,
        ErrorCode::Unregistered => StatusCode::FORBIDDEN,
        ErrorCode::NotSubscribed => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::NoProvider => StatusCode::SERVICE_UNAVAILABLE,
        ErrorCode::NoValueYet => StatusCode::NOT_FOUND,
        ErrorCode::UpstreamUnavailable => StatusCode::BAD_GATEWAY,
    }
}

fn envelope_response(envelope: WireEnvelope) -> Response {
    let status = envelope
        .as_error()
        .map(|e| status_for(e.code))
        .unwrap_or(StatusCode::OK);
    (status, Json(envelope)).into_response()
}

async fn post_kind(state: AppState, kind: Kind, headers: HeaderMap, bytes: Bytes) -> Response {
    let rid = state.request_id(&headers);
    match serde_json::from_slice::<Value>(&bytes) {
        Ok(body) => state.run(kind, rid, body).await,
        Err(e) => envelope_response(WireEnvelope::error(&rid, ErrorBody::bad_request(format!("malformed body: {e}")))),
    }
}

pub fn router(service: Arc<BrokerService>) -> Router {
    let state = AppState {
        service,
        next_request: Arc::new(AtomicU64::new(0)),
    };
    Router::new()
        .route(
            "/subscriptions",
            post(|State(s): State<AppState>, h: HeaderMap, b: Bytes| post_kind(s, Kind::Subscribe, h, b)),
        )
        .route(
            "/subscriptions/{id}",
            delete(|State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                let rid = s.request_id(&h);
                s.run(Kind::Unsubscribe, rid, json!({ "subscription_id": id })).await
            }),
        )
        .route(
            "/registrations",
            post(|State(s): State<AppState>, h: HeaderMap, b: Bytes| post_kind(s, Kind::Register, h, b)),
        )
        .route(
            "/registrations/{id}",
            delete(|State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                let rid = s.request_id(&h);
                s.run(Kind::Deregister, rid, json!({ "registration_id": id })).await
            }),
        )
        .route(
            "/notify",
            post(|State(s): State<AppState>, h: HeaderMap, b: Bytes| post_kind(s, Kind::Notify, h, b)),
        )
        .route(
            "/subscriptions/{id}/topics/{topic}/current",
            get(
                |State(s): State<AppState>, h: HeaderMap, Path((id, topic)): Path<(String, String)>| async move {
                    let rid = s.request_id(&h);
                    s.run(Kind::PullCurrent, rid, json!({ "subscription_id": id, "topic": topic })).await
                },
            ),
        )
        .route(
            "/subscriptions/{id}/topics/{topic}/last",
            get(
                |State(s): State<AppState>, h: HeaderMap, Path((id, topic)): Path<(String, String)>| async move {
                    let rid = s.request_id(&h);
                    s.run(Kind::PullLast, rid, json!({ "subscription_id": id, "topic": topic })).await
                },
            ),
        )
        .route(
            "/topics/{topic}/services",
            get(|State(s): State<AppState>, h: HeaderMap, Path(topic): Path<String>| async move {
                let rid = s.request_id(&h);
                s.run(Kind::FindServices, rid, json!({ "topic": topic })).await
            }),
        )
        .route(
            "/topics/{topic}/consumers",
            get(|State(s): State<AppState>, h: HeaderMap, Path(topic): Path<String>| async move {
                let rid = s.request_id(&h);
                s.run(Kind::FindConsumers, rid, json!({ "topic": topic })).await
            }),
        )
        .route(
            "/subscriptions/{id}/decision",
            get(|State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                let rid = s.request_id(&h);
                s.run(Kind::Decision, rid, json!({ "subscription_id": id })).await
            }),
        )
        .route(
            "/rpc",
            post(|State(s): State<AppState>, b: Bytes| async move {
                match serde_json::from_slice::<WireEnvelope>(&b) {
                    Ok(env) => envelope_response(s.service.handle_request(env).await),
                    Err(e) => envelope_response(WireEnvelope::error(
                        "",
                        ErrorBody::bad_request(format!("malformed envelope: {e}")),
                    )),
                }
            }),
        )
        .route(
            "/health",
            get(|State(s): State<AppState>| async move {
                Json(json!({
                    "revision": s.service.revision(),
                    "pending_deliveries": s.service.dispatcher().pending(),
                    "delivered": s.service.dispatcher().delivered(),
                    "dropped": s.service.dispatcher().dropped(),
                }))
            }),
        )
        .with_state(state)
}

/// A running broker endpoint.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    pub service: Arc<BrokerService>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl ServiceHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Waits until the server task exits (it only does on shutdown or error).
    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

/// Starts the broker described by `config`: loads the catalog, restores the
/// snapshot if one exists and binds the listen address.
pub async fn serve(config: &ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    let catalog = config.load_catalog()?;
    let timeout = Duration::from_millis(config.request_timeout_ms);
    serve_with(
        &config.listen,
        catalog,
        config.persist.clone(),
        config.retry,
        Arc::new(HttpSink::new(timeout)),
        Arc::new(HttpUpstream::new(timeout)),
    )
    .await
}

pub async fn serve_with(
    listen: &str,
    catalog: IndicatorCatalog,
    persist: Option<PathBuf>,
    policy: RetryPolicy,
    sink: Arc<dyn CallbackSink>,
    upstream: Arc<dyn Upstream>,
) -> Result<ServiceHandle, ServiceError> {
    let service = Arc::new(BrokerService::open(catalog, persist, sink, upstream, policy)?);
    let listener = TcpListener::bind(listen).await.map_err(|source| ServiceError::Bind {
        addr: listen.to_string(),
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| ServiceError::Bind {
        addr: listen.to_string(),
        source,
    })?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::clone(&service));
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            tracing::error!(error = %e, "server stopped");
        }
    });
    tracing::info!(%addr, "broker listening");
    Ok(ServiceHandle {
        addr,
        service,
        shutdown: Some(tx),
        task,
    })
}
