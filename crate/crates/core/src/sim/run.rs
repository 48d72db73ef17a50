//! Scenario runner.
//!
//! The same timeline can be driven against an in-process [`Broker`] or
//! against a broker service started on loopback, with consumer callbacks and
//! service pull endpoints served by a small local HTTP endpoint. After every
//! event the runner waits for pending pushes to land, so both modes observe
//! the same deliveries in the same order.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use super::report::{Notified, PullKind, PullOutcome, RunReport, ServiceReport, TopicReport};
use super::scenario::{EventKind, Scenario};
use crate::broker::{Broker, Clock, ErrorCode, Outbound, PullTarget, ServiceConnector};
use crate::qoc::{ContextSample, RequirementProfile, ServiceOffer, TopicId};
use crate::selection::DecisionMatrix;
use crate::service::delivery::{HttpSink, RetryPolicy};
use crate::service::wire::{AdvisoryBody, Kind, NotificationBody, WireEnvelope};
use crate::service::{serve_with, HttpUpstream, ServiceError, ServiceHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    InProcess,
    OverWire,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("broker failed to start: {0}")]
    Startup(#[from] ServiceError),
    #[error("transport: {0}")]
    Transport(String),
    #[error("event {index} (at {at}): {message}")]
    Unexpected { index: usize, at: i64, message: String },
    #[error("runtime: {0}")]
    Runtime(#[from] std::io::Error),
}

/// Longest real wait for pushes to drain after an over-wire event.
const SETTLE_TIMEOUT: Duration = Duration::from_secs(10);

/// Simulated context services: each answers pulls with a fresh token
/// stamped with the virtual clock.
#[derive(Clone)]
struct SimServices {
    clock: Arc<AtomicI64>,
    pulls: Arc<Mutex<BTreeMap<String, u64>>>,
}

impl SimServices {
    fn answer(&self, service_id: &str, topic: &TopicId) -> ContextSample {
        *self.pulls.lock().unwrap().entry(service_id.to_string()).or_default() += 1;
        let at = self.clock.load(Ordering::SeqCst);
        ContextSample {
            topic: topic.clone(),
            payload: json!(format!("{service_id}:{topic}:pull@{at}")),
            produced_at: at,
            service_id: service_id.to_string(),
        }
    }
}

impl ServiceConnector for SimServices {
    fn pull(&mut self, target: &PullTarget) -> Result<ContextSample, String> {
        Ok(self.answer(&target.service_id, &target.topic))
    }
}

struct LocalBackend {
    broker: Broker,
    services: SimServices,
}

type Inbox = Arc<Mutex<Vec<(String, WireEnvelope)>>>;

struct WireBackend {
    broker: Option<ServiceHandle>,
    client: reqwest::Client,
    base: String,
    sim_base: String,
    inbox: Inbox,
    sim_shutdown: Option<oneshot::Sender<()>>,
}

enum Backend {
    Local(LocalBackend),
    Wire(WireBackend),
}

type Call<T> = Result<Result<T, ErrorCode>, SimError>;

fn local<T>(r: Result<T, crate::broker::BrokerError>) -> Call<T> {
    Ok(r.map_err(|e| e.code()))
}

impl WireBackend {
    async fn start(scenario: &Scenario, services: SimServices) -> Result<Self, SimError> {
        let inbox: Inbox = Arc::new(Mutex::new(Vec::new()));
        let app = Router::new()
            .route(
                "/callbacks/{consumer}",
                post(|State((inbox, _)): State<(Inbox, SimServices)>, Path(consumer): Path<String>, Json(env): Json<WireEnvelope>| async move {
                    inbox.lock().unwrap().push((consumer, env));
                    StatusCode::NO_CONTENT
                }),
            )
            .route(
                "/services/{service}/topics/{topic}/current",
                get(|State((_, svc)): State<(Inbox, SimServices)>, Path((service, topic)): Path<(String, String)>| async move {
                    match TopicId::new(topic) {
                        Ok(topic) => Ok(Json(svc.answer(&service, &topic))),
                        Err(_) => Err(StatusCode::BAD_REQUEST),
                    }
                }),
            )
            .with_state((Arc::clone(&inbox), services));
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let sim_addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });

        let timeout = Duration::from_secs(5);
        let broker = serve_with(
            "127.0.0.1:0",
            scenario.catalog.clone(),
            None,
            RetryPolicy::default(),
            Arc::new(HttpSink::new(timeout)),
            Arc::new(HttpUpstream::new(timeout)),
        )
        .await?;
        Ok(WireBackend {
            base: broker.base_url(),
            broker: Some(broker),
            client: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .map_err(|e| SimError::Transport(e.to_string()))?,
            sim_base: format!("http://{sim_addr}"),
            inbox,
            sim_shutdown: Some(tx),
        })
    }

    async fn call(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> Call<Value> {
        let mut req = self.client.request(method, format!("{}{path}", self.base));
        if let Some(body) = body {
            req = req.json(&body);
        }
        let resp = req.send().await.map_err(|e| SimError::Transport(e.to_string()))?;
        let env: WireEnvelope = resp.json().await.map_err(|e| SimError::Transport(e.to_string()))?;
        match env.kind {
            Kind::Ack => Ok(Ok(env.body)),
            _ => match env.as_error() {
                Some(err) => Ok(Err(err.code)),
                None => Err(SimError::Transport(format!("unexpected envelope kind {:?}", env.kind))),
            },
        }
    }

    async fn settle(&self) -> Result<(), SimError> {
        let started = Instant::now();
        loop {
            let health: Value = self
                .client
                .get(format!("{}/health", self.base))
                .send()
                .await
                .and_then(|r| r.error_for_status())
                .map_err(|e| SimError::Transport(e.to_string()))?
                .json()
                .await
                .map_err(|e| SimError::Transport(e.to_string()))?;
            if health["pending_deliveries"].as_u64() == Some(0) {
                return Ok(());
            }
            if started.elapsed() > SETTLE_TIMEOUT {
                return Err(SimError::Transport("pushes did not drain in time".into()));
            }
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
    }

    async fn shutdown(&mut self) {
        if let Some(tx) = self.sim_shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.broker.take() {
            handle.shutdown().await;
        }
    }
}

fn decode<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, SimError> {
    serde_json::from_value(value).map_err(|e| SimError::Transport(e.to_string()))
}

impl Backend {
    fn callback_for(&self, consumer: &str) -> String {
        match self {
            Backend::Local(_) => format!("sim://consumer/{consumer}"),
            Backend::Wire(w) => format!("{}/callbacks/{consumer}", w.sim_base),
        }
    }

    fn address_for(&self, service: &str) -> String {
        match self {
            Backend::Local(_) => format!("sim://service/{service}"),
            Backend::Wire(w) => format!("{}/services/{service}", w.sim_base),
        }
    }

    async fn register(&mut self, offer: &ServiceOffer) -> Call<String> {
        let address = self.address_for(&offer.service_id);
        match self {
            Backend::Local(l) => local(l.broker.register_context_service(offer.clone(), &address)),
            Backend::Wire(w) => {
                let body = json!({ "offer": offer, "service_address": address });
                Ok(match w.call(reqwest::Method::POST, "/registrations", Some(body)).await? {
                    Ok(v) => Ok(decode::<crate::service::wire::RegisterAck>(v)?.registration_id),
                    Err(code) => Err(code),
                })
            }
        }
    }

    async fn deregister(&mut self, registration_id: &str) -> Call<()> {
        match self {
            Backend::Local(l) => local(l.broker.deregister_context_service(registration_id)),
            Backend::Wire(w) => Ok(w
                .call(reqwest::Method::DELETE, &format!("/registrations/{registration_id}"), None)
                .await?
                .map(|_| ())),
        }
    }

    async fn subscribe(&mut self, consumer: &str, profile: &RequirementProfile) -> Call<String> {
        let callback = self.callback_for(consumer);
        match self {
            Backend::Local(l) => local(l.broker.subscribe(consumer, profile.clone(), &callback)),
            Backend::Wire(w) => {
                let body = json!({ "consumer_id": consumer, "profile": profile, "callback_address": callback });
                Ok(match w.call(reqwest::Method::POST, "/subscriptions", Some(body)).await? {
                    Ok(v) => Ok(decode::<crate::service::wire::SubscribeAck>(v)?.subscription_id),
                    Err(code) => Err(code),
                })
            }
        }
    }

    async fn unsubscribe(&mut self, subscription_id: &str) -> Call<()> {
        match self {
            Backend::Local(l) => local(l.broker.unsubscribe(subscription_id)),
            Backend::Wire(w) => Ok(w
                .call(reqwest::Method::DELETE, &format!("/subscriptions/{subscription_id}"), None)
                .await?
                .map(|_| ())),
        }
    }

    async fn publish(&mut self, sample: ContextSample) -> Call<()> {
        match self {
            Backend::Local(l) => {
                let service = sample.service_id.clone();
                local(l.broker.notify_context_change(&service, sample))
            }
            Backend::Wire(w) => Ok(w
                .call(reqwest::Method::POST, "/notify", Some(json!(sample)))
                .await?
                .map(|_| ())),
        }
    }

    async fn pull(&mut self, subscription_id: &str, topic: &TopicId, kind: PullKind) -> Call<ContextSample> {
        match self {
            Backend::Local(l) => match kind {
                PullKind::Current => local(l.broker.get_current_topic_value(subscription_id, topic, &mut l.services)),
                PullKind::Last => local(l.broker.get_last_topic_value(subscription_id, topic)),
            },
            Backend::Wire(w) => {
                let leaf = match kind {
                    PullKind::Current => "current",
                    PullKind::Last => "last",
                };
                let path = format!("/subscriptions/{subscription_id}/topics/{topic}/{leaf}");
                Ok(match w.call(reqwest::Method::GET, &path, None).await? {
                    Ok(v) => Ok(decode(v)?),
                    Err(code) => Err(code),
                })
            }
        }
    }

    async fn decision(&mut self, subscription_id: &str) -> Call<DecisionMatrix> {
        match self {
            Backend::Local(l) => local(l.broker.selection(subscription_id).map(|s| s.decision.clone())),
            Backend::Wire(w) => {
                let path = format!("/subscriptions/{subscription_id}/decision");
                Ok(match w.call(reqwest::Method::GET, &path, None).await? {
                    Ok(v) => Ok(decode::<crate::broker::SelectionState>(v)?.decision),
                    Err(code) => Err(code),
                })
            }
        }
    }

    /// Waits for in-flight pushes and returns them as (consumer, message).
    async fn settle(&mut self) -> Result<Vec<(String, Outbound)>, SimError> {
        match self {
            Backend::Local(l) => Ok(l
                .broker
                .take_dispatches()
                .into_iter()
                .map(|d| {
                    let consumer = d
                        .callback_address
                        .strip_prefix("sim://consumer/")
                        .unwrap_or(&d.callback_address)
                        .to_string();
                    (consumer, d.message)
                })
                .collect()),
            Backend::Wire(w) => {
                w.settle().await?;
                let received = std::mem::take(&mut *w.inbox.lock().unwrap());
                received
                    .into_iter()
                    .map(|(consumer, env)| {
                        let message = match env.kind {
                            Kind::Notify => Outbound::Notification {
                                sample: decode::<NotificationBody>(env.body)?.sample,
                            },
                            Kind::Advisory => Outbound::Advisory {
                                topics: decode::<AdvisoryBody>(env.body)?.topics,
                            },
                            other => return Err(SimError::Transport(format!("unexpected push kind {other:?}"))),
                        };
                        Ok((consumer, message))
                    })
                    .collect()
            }
        }
    }
}

/// Runs the scenario on a fresh tokio runtime.
pub fn run(scenario: &Scenario, mode: RunMode) -> Result<RunReport, SimError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    rt.block_on(run_async(scenario, mode))
}

pub async fn run_async(scenario: &Scenario, mode: RunMode) -> Result<RunReport, SimError> {
    let clock = Arc::new(AtomicI64::new(0));
    let services = SimServices {
        clock: Arc::clone(&clock),
        pulls: Arc::new(Mutex::new(BTreeMap::new())),
    };
    let mut backend = match mode {
        RunMode::InProcess => Backend::Local(LocalBackend {
            broker: Broker::with_clock(scenario.catalog.clone(), Clock::Manual(Arc::clone(&clock))),
            services: services.clone(),
        }),
        RunMode::OverWire => Backend::Wire(WireBackend::start(scenario, services.clone()).await?),
    };

    let result = drive(scenario, &mut backend, &clock).await;
    if let Backend::Wire(w) = &mut backend {
        w.shutdown().await;
    }
    let mut report = result?;
    for (service, pulls) in services.pulls.lock().unwrap().iter() {
        report.services.entry(service.clone()).or_default().pulls = *pulls;
    }
    Ok(report)
}

async fn drive(scenario: &Scenario, backend: &mut Backend, clock: &AtomicI64) -> Result<RunReport, SimError> {
    let mut report = RunReport {
        seed: scenario.seed,
        events: scenario.timeline.len(),
        ..Default::default()
    };
    for (consumer, topics) in scenario.consumer_topics() {
        let entry = report.consumers.entry(consumer).or_default();
        for t in topics {
            entry.insert(t.to_string(), TopicReport::default());
        }
    }
    for offer in scenario.all_offers() {
        report.services.insert(offer.service_id.clone(), ServiceReport::default());
    }

    let mut registrations: HashMap<String, String> = HashMap::new();
    let mut subscriptions: BTreeMap<String, String> = BTreeMap::new();

    for (index, event) in scenario.timeline.iter().enumerate() {
        let at = event.at;
        clock.store(at, Ordering::SeqCst);
        let unexpected = |what: String| SimError::Unexpected { index, at, message: what };
        match &event.kind {
            EventKind::Register { service } => {
                let offer = scenario.offer(service).expect("validated");
                let id = backend.register(offer).await?.map_err(|c| unexpected(format!("register: {c:?}")))?;
                registrations.insert(service.clone(), id);
            }
            EventKind::Deregister { service } => {
                let id = registrations.remove(service).expect("validated");
                backend.deregister(&id).await?.map_err(|c| unexpected(format!("deregister: {c:?}")))?;
            }
            EventKind::Subscribe { consumer } => {
                let profile = &scenario.consumer(consumer).expect("validated").profile;
                let id = backend
                    .subscribe(consumer, profile)
                    .await?
                    .map_err(|c| unexpected(format!("subscribe: {c:?}")))?;
                subscriptions.insert(consumer.clone(), id);
            }
            EventKind::Unsubscribe { consumer } => {
                let id = subscriptions.remove(consumer).expect("validated");
                backend.unsubscribe(&id).await?.map_err(|c| unexpected(format!("unsubscribe: {c:?}")))?;
            }
            EventKind::Publish { service, topic, payload } => {
                let token = payload.clone().unwrap_or_else(|| format!("{service}:{topic}@{at}"));
                let sample = ContextSample {
                    topic: topic.clone(),
                    payload: json!(token),
                    produced_at: at,
                    service_id: service.clone(),
                };
                backend.publish(sample).await?.map_err(|c| unexpected(format!("publish: {c:?}")))?;
                report.services.entry(service.clone()).or_default().publications += 1;
            }
            EventKind::Pull { consumer, topic } | EventKind::PullLast { consumer, topic } => {
                let kind = if matches!(event.kind, EventKind::Pull { .. }) { PullKind::Current } else { PullKind::Last };
                let id = subscriptions.get(consumer).expect("validated").clone();
                let outcome = match backend.pull(&id, topic, kind).await? {
                    Ok(sample) => PullOutcome { at, kind, sample: Some(sample), error: None },
                    Err(code) => PullOutcome { at, kind, sample: None, error: Some(code) },
                };
                topic_entry(&mut report, consumer, topic).pulls.push(outcome);
            }
        }

        for (consumer, message) in backend.settle().await? {
            match message {
                Outbound::Notification { sample } => {
                    let entry = topic_entry(&mut report, &consumer, &sample.topic);
                    entry.notifications.push(Notified {
                        service_id: sample.service_id.clone(),
                        produced_at: sample.produced_at,
                    });
                    entry.last_notified = Some(sample);
                }
                Outbound::Advisory { topics } => {
                    for t in topics {
                        topic_entry(&mut report, &consumer, &t).advisories += 1;
                    }
                }
            }
        }

        if event.kind.is_mutation() {
            for (consumer, id) in &subscriptions {
                let decision = backend
                    .decision(id)
                    .await?
                    .map_err(|c| unexpected(format!("decision: {c:?}")))?;
                for (topic, selected) in decision.topics.iter().zip(decision.selected) {
                    let entry = topic_entry(&mut report, consumer, topic);
                    match entry.selection_history.last() {
                        Some(last) if *last == selected => {}
                        Some(_) => {
                            entry.switches += 1;
                            entry.selection_history.push(selected);
                            report.selection_switches += 1;
                        }
                        None => entry.selection_history.push(selected),
                    }
                }
            }
        }
    }
    Ok(report)
}

fn topic_entry<'a>(report: &'a mut RunReport, consumer: &str, topic: &TopicId) -> &'a mut TopicReport {
    report
        .consumers
        .entry(consumer.to_string())
        .or_default()
        .entry(topic.to_string())
        .or_default()
}
