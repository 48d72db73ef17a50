//! Broker state machine.
//!
//! The [`Broker`] owns the subscription and registration registries, the
//! per-subscription selection state and the sample cache. It never does I/O:
//! notifications and advisories are queued as [`Dispatch`] records for the
//! caller to deliver, and pull requests go through a [`ServiceConnector`].
//! Every mutation runs through `&mut self`, so whoever owns the broker is the
//! single writer.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qoc::{validate_profile, ContextSample, IndicatorCatalog, ModelError, RequirementProfile, ServiceOffer, TopicId};
use crate::selection::{group_by_cloud, renegotiation_report, select_multi_cloud, DecisionMatrix, SelectionError};

/// Closed set of machine-readable error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    Unregistered,
    NotSubscribed,
    NoProvider,
    NoValueYet,
    UpstreamUnavailable,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::BadRequest => "BAD_REQUEST",
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::Conflict => "CONFLICT",
            ErrorCode::Unregistered => "UNREGISTERED",
            ErrorCode::NotSubscribed => "NOT_SUBSCRIBED",
            ErrorCode::NoProvider => "NO_PROVIDER",
            ErrorCode::NoValueYet => "NO_VALUE_YET",
            ErrorCode::UpstreamUnavailable => "UPSTREAM_UNAVAILABLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BrokerError {
    #[error("invalid profile: {0}")]
    InvalidProfile(ModelError),
    #[error("invalid offer: {0}")]
    InvalidOffer(ModelError),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("unknown subscription `{0}`")]
    UnknownSubscription(String),
    #[error("unknown registration `{0}`")]
    UnknownRegistration(String),
    #[error("service `{0}` already has an active registration")]
    DuplicateService(String),
    #[error("service `{0}` is not registered")]
    Unregistered(String),
    #[error("service `{service}` does not offer topic `{topic}`")]
    UnofferedTopic { service: String, topic: TopicId },
    #[error("subscription `{subscription}` does not cover topic `{topic}`")]
    NotSubscribed { subscription: String, topic: TopicId },
    #[error("no context service satisfies the requirements for {topics:?}")]
    NoProvider { subscription: String, topics: Vec<TopicId> },
    #[error("no value received yet for topic `{0}`")]
    NoValueYet(TopicId),
    #[error("service `{service}` unavailable: {reason}")]
    UpstreamUnavailable { service: String, reason: String },
    #[error("snapshot does not match broker catalog")]
    CatalogMismatch,
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

impl BrokerError {
    pub fn code(&self) -> ErrorCode {
        match self {
            BrokerError::InvalidProfile(_)
            | BrokerError::InvalidOffer(_)
            | BrokerError::InvalidSample(_)
            | BrokerError::UnofferedTopic { .. }
            | BrokerError::CatalogMismatch
            | BrokerError::Selection(_) => ErrorCode::BadRequest,
            BrokerError::UnknownSubscription(_) | BrokerError::UnknownRegistration(_) => ErrorCode::NotFound,
            BrokerError::DuplicateService(_) => ErrorCode::Conflict,
            BrokerError::Unregistered(_) => ErrorCode::Unregistered,
            BrokerError::NotSubscribed { .. } => ErrorCode::NotSubscribed,
            BrokerError::NoProvider { .. } => ErrorCode::NoProvider,
            BrokerError::NoValueYet(_) => ErrorCode::NoValueYet,
            BrokerError::UpstreamUnavailable { .. } => ErrorCode::UpstreamUnavailable,
        }
    }

    /// Topics the consumer should relax, for `NO_PROVIDER` errors.
    pub fn advisory_topics(&self) -> Option<&[TopicId]> {
        match self {
            BrokerError::NoProvider { topics, .. } => Some(topics),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub subscription_id: String,
    pub consumer_id: String,
    pub profile: RequirementProfile,
    pub callback_address: String,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub registration_id: String,
    pub offer: ServiceOffer,
    pub service_address: String,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub decision: DecisionMatrix,
    /// Broker-wide revision at which this decision last changed.
    pub revision: u64,
}

/// Message queued for delivery to a consumer callback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub subscription_id: String,
    pub callback_address: String,
    pub message: Outbound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Notification { sample: ContextSample },
    Advisory { topics: Vec<TopicId> },
}

/// One record per mutation and per dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BrokerEvent {
    Subscribed { subscription_id: String, consumer_id: String },
    Unsubscribed { subscription_id: String },
    Registered { registration_id: String, service_id: String },
    Deregistered { registration_id: String, service_id: String },
    Reselected { subscription_id: String, revision: u64, selected: Vec<Option<String>> },
    Published { service_id: String, topic: TopicId, produced_at: i64, delivered_to: usize },
    Pulled { subscription_id: String, service_id: String, topic: TopicId },
    Dispatched { subscription_id: String, kind: String },
}

/// Target of a pull-through request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullTarget {
    pub subscription_id: String,
    pub service_id: String,
    pub service_address: String,
    pub topic: TopicId,
}

/// Fetches the current value of a topic from a context service.
pub trait ServiceConnector {
    fn pull(&mut self, target: &PullTarget) -> Result<ContextSample, String>;
}

#[derive(Debug, Clone, Default)]
pub enum Clock {
    #[default]
    System,
    Manual(Arc<AtomicI64>),
}

impl Clock {
    pub fn now_ms(&self) -> i64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as i64)
                .unwrap_or(0),
            Clock::Manual(t) => t.load(Ordering::SeqCst),
        }
    }
}

/// Everything needed to rebuild a broker after a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistentState {
    pub catalog: IndicatorCatalog,
    pub revision: u64,
    pub next_subscription: u64,
    pub next_registration: u64,
    pub subscriptions: Vec<Subscription>,
    pub registrations: Vec<Registration>,
    #[serde(default)]
    pub selection_revisions: BTreeMap<String, u64>,
}

struct SubscriptionEntry {
    sub: Subscription,
    selection: SelectionState,
}

pub struct Broker {
    catalog: IndicatorCatalog,
    clock: Clock,
    revision: u64,
    next_subscription: u64,
    next_registration: u64,
    subscriptions: IndexMap<String, SubscriptionEntry>,
    registrations: IndexMap<String, Registration>,
    /// Latest sample per (topic, service).
    cache: BTreeMap<(TopicId, String), ContextSample>,
    outbox: Vec<Dispatch>,
    events: Vec<BrokerEvent>,
}

impl Broker {
    pub fn new(catalog: IndicatorCatalog) -> Self {
        Broker::with_clock(catalog, Clock::System)
    }

    pub fn with_clock(catalog: IndicatorCatalog, clock: Clock) -> Self {
        Broker {
            catalog,
            clock,
            revision: 0,
            next_subscription: 1,
            next_registration: 1,
            subscriptions: IndexMap::new(),
            registrations: IndexMap::new(),
            cache: BTreeMap::new(),
            outbox: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn catalog(&self) -> &IndicatorCatalog {
        &self.catalog
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn subscribe(
        &mut self,
        consumer_id: &str,
        profile: RequirementProfile,
        callback_address: &str,
    ) -> Result<String, BrokerError> {
        validate_profile(&profile, &self.catalog).map_err(BrokerError::InvalidProfile)?;
        let decision = self.decide(&profile)?;

        let id = format!("sub-{}", self.next_subscription);
        self.next_subscription += 1;
        self.revision += 1;
        let sub = Subscription {
            subscription_id: id.clone(),
            consumer_id: consumer_id.to_string(),
            profile,
            callback_address: callback_address.to_string(),
            created_at: self.clock.now_ms(),
        };
        self.events.push(BrokerEvent::Subscribed {
            subscription_id: id.clone(),
            consumer_id: consumer_id.to_string(),
        });
        self.events.push(BrokerEvent::Reselected {
            subscription_id: id.clone(),
            revision: self.revision,
            selected: decision.selected.clone(),
        });
        let unserved = renegotiation_report(&decision);
        self.subscriptions.insert(
            id.clone(),
            SubscriptionEntry {
                sub,
                selection: SelectionState { decision, revision: self.revision },
            },
        );
        if !unserved.is_empty() {
            self.notify_renegotiation(&id, unserved)?;
        }
        Ok(id)
    }

    pub fn unsubscribe(&mut self, subscription_id: &str) -> Result<(), BrokerError> {
        self.subscriptions
            .shift_remove(subscription_id)
            .ok_or_else(|| BrokerError::UnknownSubscription(subscription_id.to_string()))?;
        self.events.push(BrokerEvent::Unsubscribed {
            subscription_id: subscription_id.to_string(),
        });
        Ok(())
    }

    pub fn register_context_service(
        &mut self,
        offer: ServiceOffer,
        service_address: &str,
    ) -> Result<String, BrokerError> {
        offer.validate(&self.catalog).map_err(BrokerError::InvalidOffer)?;
        if self.registration_for(&offer.service_id).is_some() {
            return Err(BrokerError::DuplicateService(offer.service_id));
        }
        let id = format!("reg-{}", self.next_registration);
        self.next_registration += 1;
        self.events.push(BrokerEvent::Registered {
            registration_id: id.clone(),
            service_id: offer.service_id.clone(),
        });
        self.registrations.insert(
            id.clone(),
            Registration {
                registration_id: id.clone(),
                offer,
                service_address: service_address.to_string(),
                created_at: self.clock.now_ms(),
            },
        );
        self.reselect_all()?;
        Ok(id)
    }

    pub fn deregister_context_service(&mut self, registration_id: &str) -> Result<(), BrokerError> {
        let reg = self
            .registrations
            .shift_remove(registration_id)
            .ok_or_else(|| BrokerError::UnknownRegistration(registration_id.to_string()))?;
        self.events.push(BrokerEvent::Deregistered {
            registration_id: registration_id.to_string(),
            service_id: reg.offer.service_id,
        });
        self.reselect_all()
    }

    /// Accepts a published sample and queues one notification for every
    /// subscription whose selected service for the topic is the publisher.
    pub fn notify_context_change(&mut self, service_id: &str, sample: ContextSample) -> Result<(), BrokerError> {
        let reg = self
            .registration_for(service_id)
            .ok_or_else(|| BrokerError::Unregistered(service_id.to_string()))?;
        if !reg.offer.offers(&sample.topic) {
            return Err(BrokerError::UnofferedTopic {
                service: service_id.to_string(),
                topic: sample.topic,
            });
        }
        if sample.service_id != service_id {
            return Err(BrokerError::InvalidSample(format!(
                "sample names service `{}` but was published by `{service_id}`",
                sample.service_id
            )));
        }
        let key = (sample.topic.clone(), service_id.to_string());
        if let Some(prev) = self.cache.get(&key) {
            if sample.produced_at < prev.produced_at {
                return Err(BrokerError::InvalidSample(format!(
                    "produced_at {} is older than the last accepted {}",
                    sample.produced_at, prev.produced_at
                )));
            }
        }

        let targets: Vec<(String, String)> = self
            .subscriptions
            .values()
            .filter(|e| e.selection.decision.selected_for(&sample.topic) == Some(service_id))
            .map(|e| (e.sub.subscription_id.clone(), e.sub.callback_address.clone()))
            .collect();
        self.events.push(BrokerEvent::Published {
            service_id: service_id.to_string(),
            topic: sample.topic.clone(),
            produced_at: sample.produced_at,
            delivered_to: targets.len(),
        });
        for (subscription_id, callback_address) in targets {
            self.queue(Dispatch {
                subscription_id,
                callback_address,
                message: Outbound::Notification { sample: sample.clone() },
            });
        }
        self.cache.insert(key, sample);
        Ok(())
    }

    /// Resolves which service a pull-through request for `topic` goes to.
    pub fn resolve_pull(&self, subscription_id: &str, topic: &TopicId) -> Result<PullTarget, BrokerError> {
        let entry = self.entry(subscription_id)?;
        let decision = &entry.selection.decision;
        if entry.sub.profile.topic_index(topic).is_none() {
            return Err(BrokerError::NotSubscribed {
                subscription: subscription_id.to_string(),
                topic: topic.clone(),
            });
        }
        let Some(service_id) = decision.selected_for(topic) else {
            return Err(BrokerError::NoProvider {
                subscription: subscription_id.to_string(),
                topics: renegotiation_report(decision),
            });
        };
        let reg = self
            .registration_for(service_id)
            .expect("selected service is registered");
        Ok(PullTarget {
            subscription_id: subscription_id.to_string(),
            service_id: service_id.to_string(),
            service_address: reg.service_address.clone(),
            topic: topic.clone(),
        })
    }

    /// Records a sample fetched from `target` and returns it.
    pub fn accept_pulled(&mut self, target: &PullTarget, sample: ContextSample) -> Result<ContextSample, BrokerError> {
        if sample.topic != target.topic || sample.service_id != target.service_id {
            return Err(BrokerError::UpstreamUnavailable {
                service: target.service_id.clone(),
                reason: format!(
                    "answered with topic `{}` from `{}`",
                    sample.topic, sample.service_id
                ),
            });
        }
        self.events.push(BrokerEvent::Pulled {
            subscription_id: target.subscription_id.clone(),
            service_id: target.service_id.clone(),
            topic: target.topic.clone(),
        });
        // the service may have been deregistered while the pull was in flight
        if self.registration_for(&target.service_id).is_some() {
            let key = (sample.topic.clone(), sample.service_id.clone());
            let newer = self
                .cache
                .get(&key)
                .is_none_or(|prev| prev.produced_at <= sample.produced_at);
            if newer {
                self.cache.insert(key, sample.clone());
            }
        }
        Ok(sample)
    }

    pub fn get_current_topic_value(
        &mut self,
        subscription_id: &str,
        topic: &TopicId,
        connector: &mut dyn ServiceConnector,
    ) -> Result<ContextSample, BrokerError> {
        let target = self.resolve_pull(subscription_id, topic)?;
        let sample = connector
            .pull(&target)
            .map_err(|reason| BrokerError::UpstreamUnavailable {
                service: target.service_id.clone(),
                reason,
            })?;
        self.accept_pulled(&target, sample)
    }

    /// Cached value for the subscription's selected service. Without one, the
    /// newest sample from any service feasible for this subscription.
    pub fn get_last_topic_value(&self, subscription_id: &str, topic: &TopicId) -> Result<ContextSample, BrokerError> {
        let entry = self.entry(subscription_id)?;
        if entry.sub.profile.topic_index(topic).is_none() {
            return Err(BrokerError::NotSubscribed {
                subscription: subscription_id.to_string(),
                topic: topic.clone(),
            });
        }
        let decision = &entry.selection.decision;
        if let Some(selected) = decision.selected_for(topic) {
            if let Some(sample) = self.cache.get(&(topic.clone(), selected.to_string())) {
                return Ok(sample.clone());
            }
        }
        self.cache
            .range((topic.clone(), String::new())..)
            .take_while(|((t, _), _)| t == topic)
            .filter(|((_, service), _)| decision.is_feasible(topic, service))
            .map(|(_, sample)| sample)
            .fold(None::<&ContextSample>, |best, s| match best {
                Some(b) if b.produced_at >= s.produced_at => Some(b),
                _ => Some(s),
            })
            .cloned()
            .ok_or_else(|| BrokerError::NoValueYet(topic.clone()))
    }

    /// Live subscriptions covering `topic`, in admission order.
    pub fn find_context_consumers(&self, topic: &TopicId) -> Vec<String> {
        self.subscriptions
            .values()
            .filter(|e| e.sub.profile.topic_index(topic).is_some())
            .map(|e| e.sub.subscription_id.clone())
            .collect()
    }

    /// Live registrations offering `topic`, in admission order.
    pub fn find_context_services(&self, topic: &TopicId) -> Vec<String> {
        self.registrations
            .values()
            .filter(|r| r.offer.offers(topic))
            .map(|r| r.offer.service_id.clone())
            .collect()
    }

    /// Queues an advisory listing the topics nobody can serve. Sends nothing
    /// when `topics` is empty.
    pub fn notify_renegotiation(&mut self, subscription_id: &str, topics: Vec<TopicId>) -> Result<(), BrokerError> {
        let callback_address = self.entry(subscription_id)?.sub.callback_address.clone();
        if topics.is_empty() {
            return Ok(());
        }
        self.queue(Dispatch {
            subscription_id: subscription_id.to_string(),
            callback_address,
            message: Outbound::Advisory { topics },
        });
        Ok(())
    }

    pub fn selection(&self, subscription_id: &str) -> Result<&SelectionState, BrokerError> {
        Ok(&self.entry(subscription_id)?.selection)
    }

    pub fn subscription(&self, subscription_id: &str) -> Result<&Subscription, BrokerError> {
        Ok(&self.entry(subscription_id)?.sub)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subscriptions.values().map(|e| &e.sub)
    }

    pub fn registrations(&self) -> impl Iterator<Item = &Registration> {
        self.registrations.values()
    }

    pub fn registration_for(&self, service_id: &str) -> Option<&Registration> {
        self.registrations.values().find(|r| r.offer.service_id == service_id)
    }

    pub fn live_offers(&self) -> Vec<ServiceOffer> {
        self.registrations.values().map(|r| r.offer.clone()).collect()
    }

    pub fn take_dispatches(&mut self) -> Vec<Dispatch> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<BrokerEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn snapshot(&self) -> PersistentState {
        PersistentState {
            catalog: self.catalog.clone(),
            revision: self.revision,
            next_subscription: self.next_subscription,
            next_registration: self.next_registration,
            subscriptions: self.subscriptions.values().map(|e| e.sub.clone()).collect(),
            registrations: self.registrations.values().cloned().collect(),
            selection_revisions: self
                .subscriptions
                .values()
                .map(|e| (e.sub.subscription_id.clone(), e.selection.revision))
                .collect(),
        }
    }

    /// Rebuilds a broker from a snapshot and recomputes every selection. No
    /// advisories are re-sent for topics that were already unserved.
    pub fn restore(catalog: IndicatorCatalog, clock: Clock, state: PersistentState) -> Result<Self, BrokerError> {
        if state.catalog != catalog {
            return Err(BrokerError::CatalogMismatch);
        }
        let mut broker = Broker::with_clock(catalog, clock);
        broker.revision = state.revision;
        broker.next_subscription = state.next_subscription;
        broker.next_registration = state.next_registration;
        let mut services = BTreeSet::new();
        for reg in state.registrations {
            reg.offer.validate(&broker.catalog).map_err(BrokerError::InvalidOffer)?;
            if !services.insert(reg.offer.service_id.clone()) {
                return Err(BrokerError::DuplicateService(reg.offer.service_id));
            }
            broker.registrations.insert(reg.registration_id.clone(), reg);
        }
        for sub in state.subscriptions {
            validate_profile(&sub.profile, &broker.catalog).map_err(BrokerError::InvalidProfile)?;
            let decision = broker.decide(&sub.profile)?;
            let revision = state
                .selection_revisions
                .get(&sub.subscription_id)
                .copied()
                .unwrap_or(state.revision);
            broker.subscriptions.insert(
                sub.subscription_id.clone(),
                SubscriptionEntry {
                    sub,
                    selection: SelectionState { decision, revision },
                },
            );
        }
        Ok(broker)
    }

    fn entry(&self, subscription_id: &str) -> Result<&SubscriptionEntry, BrokerError> {
        self.subscriptions
            .get(subscription_id)
            .ok_or_else(|| BrokerError::UnknownSubscription(subscription_id.to_string()))
    }

    fn decide(&self, profile: &RequirementProfile) -> Result<DecisionMatrix, BrokerError> {
        let clouds = group_by_cloud(&self.live_offers());
        Ok(select_multi_cloud(&clouds, profile)?)
    }

    fn queue(&mut self, dispatch: Dispatch) {
        let kind = match dispatch.message {
            Outbound::Notification { .. } => "notification",
            Outbound::Advisory { .. } => "advisory",
        };
        self.events.push(BrokerEvent::Dispatched {
            subscription_id: dispatch.subscription_id.clone(),
            kind: kind.to_string(),
        });
        self.outbox.push(dispatch);
    }

    fn reselect_all(&mut self) -> Result<(), BrokerError> {
        let clouds = group_by_cloud(&self.live_offers());
        let mut advisories = Vec::new();
        for entry in self.subscriptions.values_mut() {
            let decision = select_multi_cloud(&clouds, &entry.sub.profile)?;
            if decision == entry.selection.decision {
                continue;
            }
            let newly_unserved = decision
                .selected
                .iter()
                .zip(&entry.selection.decision.selected)
                .any(|(now, before)| now.is_none() && before.is_some());
            self.revision += 1;
            entry.selection = SelectionState { decision, revision: self.revision };
            self.events.push(BrokerEvent::Reselected {
                subscription_id: entry.sub.subscription_id.clone(),
                revision: self.revision,
                selected: entry.selection.decision.selected.clone(),
            });
            if newly_unserved {
                advisories.push((
                    entry.sub.subscription_id.clone(),
                    renegotiation_report(&entry.selection.decision),
                ));
            }
        }
        for (id, topics) in advisories {
            self.notify_renegotiation(&id, topics)?;
        }
        Ok(())
    }
}
