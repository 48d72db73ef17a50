//! Network-facing broker: envelope routing, snapshot persistence and push
//! delivery around a single [`Broker`].

pub mod config;
pub mod delivery;
pub mod http;
pub mod persist;
pub mod wire;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use crate::broker::{Broker, BrokerError, Clock, Dispatch, Outbound, PullTarget};
use crate::qoc::{ContextSample, IndicatorCatalog};
use crate::selection::renegotiation_report;
use delivery::{BoxFuture, CallbackSink, Dispatcher, RetryPolicy};
use persist::{load_snapshot, save_snapshot, PersistError};
use wire::*;

pub use config::ServiceConfig;
pub use http::{serve, serve_with, ServiceHandle};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("snapshot {path} rejected: {source}")]
    Restore { path: PathBuf, source: BrokerError },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("configuration: {0}")]
    Config(String),
}

/// Fetches a topic's current value from a registered context service.
pub trait Upstream: Send + Sync {
    fn pull<'a>(&'a self, target: &'a PullTarget) -> BoxFuture<'a, Result<ContextSample, String>>;
}

/// Pulls with `GET {service_address}/topics/{topic}/current`.
pub struct HttpUpstream {
    client: reqwest::Client,
}

impl HttpUpstream {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client");
        HttpUpstream { client }
    }
}

impl Upstream for HttpUpstream {
    fn pull<'a>(&'a self, target: &'a PullTarget) -> BoxFuture<'a, Result<ContextSample, String>> {
        Box::pin(async move {
            let mut url = reqwest::Url::parse(&target.service_address).map_err(|e| e.to_string())?;
            url.path_segments_mut()
                .map_err(|_| format!("cannot append path to {}", target.service_address))?
                .pop_if_empty()
                .extend(["topics", target.topic.as_str(), "current"]);
            let resp = self.client.get(url).send().await.map_err(|e| e.to_string())?;
            if !resp.status().is_success() {
                return Err(format!("service answered {}", resp.status()));
            }
            resp.json::<ContextSample>().await.map_err(|e| e.to_string())
        })
    }
}

/// Broker plus the I/O around it. Mutations take the write lock, so they are
/// applied (and persisted) one at a time; queries share the read lock.
pub struct BrokerService {
    broker: RwLock<Broker>,
    persist: Option<PathBuf>,
    dispatcher: Dispatcher,
    upstream: Arc<dyn Upstream>,
    push_seq: AtomicU64,
}

impl BrokerService {
    /// Restores from `persist` when a snapshot is present.
    pub fn open(
        catalog: IndicatorCatalog,
        persist: Option<PathBuf>,
        sink: Arc<dyn CallbackSink>,
        upstream: Arc<dyn Upstream>,
        policy: RetryPolicy,
    ) -> Result<Self, ServiceError> {
        catalog.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        let broker = match persist.as_deref().map(load_snapshot).transpose()?.flatten() {
            Some(state) => Broker::restore(catalog, Clock::System, state).map_err(|source| ServiceError::Restore {
                path: persist.clone().unwrap_or_default(),
                source,
            })?,
            None => Broker::new(catalog),
        };
        Ok(BrokerService {
            broker: RwLock::new(broker),
            persist,
            dispatcher: Dispatcher::new(sink, policy),
            upstream,
            push_seq: AtomicU64::new(0),
        })
    }

    pub fn dispatcher(&self) -> &Dispatcher {
        &self.dispatcher
    }

    pub fn revision(&self) -> u64 {
        self.broker.read().unwrap().revision()
    }

    /// Runs `f` against a read-locked broker.
    pub fn inspect<T>(&self, f: impl FnOnce(&Broker) -> T) -> T {
        f(&self.broker.read().unwrap())
    }

    /// Routes one request envelope. Always answers with exactly one `ack` or
    /// `error` envelope carrying the same `request_id`.
    pub async fn handle_request(&self, envelope: WireEnvelope) -> WireEnvelope {
        let rid = envelope.request_id.clone();
        match self.route(envelope).await {
            Ok(body) => WireEnvelope::ack(&rid, body),
            Err(err) => WireEnvelope::error(&rid, err),
        }
    }

    async fn route(&self, envelope: WireEnvelope) -> Result<Value, ErrorBody> {
        let body = envelope.body;
        match envelope.kind {
            Kind::Subscribe => {
                let req: SubscribeRequest = parse(body)?;
                self.mutate(|b| {
                    let id = b.subscribe(&req.consumer_id, req.profile, &req.callback_address)?;
                    let renegotiation = renegotiation_report(&b.selection(&id)?.decision);
                    Ok(SubscribeAck { subscription_id: id, renegotiation })
                })
            }
            Kind::Unsubscribe => {
                let req: SubscriptionRef = parse(body)?;
                self.mutate(|b| b.unsubscribe(&req.subscription_id))?;
                self.dispatcher.close(&req.subscription_id);
                Ok(Value::Object(Default::default()))
            }
            Kind::Register => {
                let req: RegisterRequest = parse(body)?;
                self.mutate(|b| {
                    let registration_id = b.register_context_service(req.offer, &req.service_address)?;
                    Ok(RegisterAck { registration_id })
                })
            }
            Kind::Deregister => {
                let req: RegistrationRef = parse(body)?;
                self.mutate(|b| b.deregister_context_service(&req.registration_id))
            }
            Kind::Notify => {
                let sample: ContextSample = parse(body)?;
                let service = sample.service_id.clone();
                self.mutate(|b| b.notify_context_change(&service, sample))
            }
            Kind::PullCurrent => {
                let q: TopicQuery = parse(body)?;
                let target = self
                    .inspect(|b| b.resolve_pull(&q.subscription_id, &q.topic))
                    .map_err(|e| ErrorBody::from(&e))?;
                let sample = self
                    .upstream
                    .pull(&target)
                    .await
                    .map_err(|reason| {
                        ErrorBody::from(&BrokerError::UpstreamUnavailable {
                            service: target.service_id.clone(),
                            reason,
                        })
                    })?;
                self.mutate(|b| b.accept_pulled(&target, sample))
            }
            Kind::PullLast => {
                let q: TopicQuery = parse(body)?;
                self.read(|b| b.get_last_topic_value(&q.subscription_id, &q.topic))
            }
            Kind::FindServices => {
                let q: TopicRef = parse(body)?;
                self.read(|b| Ok(b.find_context_services(&q.topic)))
            }
            Kind::FindConsumers => {
                let q: TopicRef = parse(body)?;
                self.read(|b| Ok(b.find_context_consumers(&q.topic)))
            }
            Kind::Decision => {
                let q: SubscriptionRef = parse(body)?;
                self.read(|b| b.selection(&q.subscription_id).cloned())
            }
            Kind::Advisory | Kind::Ack | Kind::Error | Kind::Unsupported => {
                Err(ErrorBody::bad_request("unsupported request kind"))
            }
        }
    }

    fn read<T: serde::Serialize>(&self, f: impl FnOnce(&Broker) -> Result<T, BrokerError>) -> Result<Value, ErrorBody> {
        let broker = self.broker.read().unwrap();
        let out = f(&broker).map_err(|e| ErrorBody::from(&e))?;
        Ok(serde_json::to_value(out).expect("response serializes"))
    }

    fn mutate<T: serde::Serialize>(
        &self,
        f: impl FnOnce(&mut Broker) -> Result<T, BrokerError>,
    ) -> Result<Value, ErrorBody> {
        let mut broker = self.broker.write().unwrap();
        let result = f(&mut broker);
        for event in broker.take_events() {
            tracing::debug!(?event, "broker event");
        }
        for dispatch in broker.take_dispatches() {
            self.push(dispatch);
        }
        let out = result.map_err(|e| ErrorBody::from(&e))?;
        if let Some(path) = &self.persist {
            if let Err(e) = save_snapshot(path, &broker.snapshot()) {
                tracing::error!(error = %e, "snapshot write failed");
            }
        }
        Ok(serde_json::to_value(out).expect("response serializes"))
    }

    fn push(&self, dispatch: Dispatch) {
        let seq = self.push_seq.fetch_add(1, Ordering::SeqCst) + 1;
        let rid = format!("push-{seq}");
        let envelope = match dispatch.message {
            Outbound::Notification { sample } => WireEnvelope::new(
                Kind::Notify,
                rid,
                NotificationBody { subscription_id: dispatch.subscription_id.clone(), sample },
            ),
            Outbound::Advisory { topics } => WireEnvelope::new(
                Kind::Advisory,
                rid,
                AdvisoryBody { subscription_id: dispatch.subscription_id.clone(), topics },
            ),
        };
        self.dispatcher
            .enqueue(&dispatch.subscription_id, dispatch.callback_address, envelope);
    }
}

fn parse<T: DeserializeOwned>(body: Value) -> Result<T, ErrorBody> {
    serde_json::from_value(body).map_err(|e| ErrorBody::bad_request(format!("malformed body: {e}")))
}
