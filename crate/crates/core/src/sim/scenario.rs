//! Scenario files: declared services and consumers plus a timeline of events
//! against a virtual millisecond clock.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qoc::{validate_profile, IndicatorCatalog, RequirementProfile, ServiceOffer, TopicId};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cloud {
    pub cloud_id: String,
    pub offers: Vec<ServiceOffer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consumer {
    pub consumer_id: String,
    pub profile: RequirementProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Publish {
        service: String,
        topic: TopicId,
        /// Opaque token; generated from service, topic and time when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payload: Option<String>,
    },
    Register { service: String },
    Deregister { service: String },
    Subscribe { consumer: String },
    Unsubscribe { consumer: String },
    Pull { consumer: String, topic: TopicId },
    PullLast { consumer: String, topic: TopicId },
}

impl EventKind {
    /// Events that can change a selection.
    pub fn is_mutation(&self) -> bool {
        matches!(
            self,
            EventKind::Register { .. }
                | EventKind::Deregister { .. }
                | EventKind::Subscribe { .. }
                | EventKind::Unsubscribe { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at: i64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub catalog: IndicatorCatalog,
    pub clouds: Vec<Cloud>,
    pub consumers: Vec<Consumer>,
    #[serde(default)]
    pub timeline: Vec<Event>,
}

impl Scenario {
    pub fn offer(&self, service_id: &str) -> Option<&ServiceOffer> {
        self.clouds
            .iter()
            .flat_map(|c| &c.offers)
            .find(|o| o.service_id == service_id)
    }

    pub fn consumer(&self, consumer_id: &str) -> Option<&Consumer> {
        self.consumers.iter().find(|c| c.consumer_id == consumer_id)
    }

    pub fn all_offers(&self) -> Vec<ServiceOffer> {
        self.clouds.iter().flat_map(|c| c.offers.iter().cloned()).collect()
    }

    /// Checks every structural invariant and replays the timeline for
    /// liveness: a service must be registered to publish, a consumer must be
    /// subscribed to pull, and register/subscribe toggle.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        self.catalog
            .validate()
            .map_err(|e| ScenarioError::Invalid(format!("catalog: {e}")))?;

        let mut services: BTreeSet<&str> = BTreeSet::new();
        for cloud in &self.clouds {
            for offer in &cloud.offers {
                if offer.cloud_id != cloud.cloud_id {
                    return invalid(format!(
                        "service `{}` declares cloud `{}` but is listed under `{}`",
                        offer.service_id, offer.cloud_id, cloud.cloud_id
                    ));
                }
                offer
                    .validate(&self.catalog)
                    .map_err(|e| ScenarioError::Invalid(format!("offer `{}`: {e}", offer.service_id)))?;
                if !services.insert(&offer.service_id) {
                    return invalid(format!("duplicate service id `{}`", offer.service_id));
                }
            }
        }
        let mut consumers: BTreeSet<&str> = BTreeSet::new();
        for consumer in &self.consumers {
            validate_profile(&consumer.profile, &self.catalog)
                .map_err(|e| ScenarioError::Invalid(format!("profile of `{}`: {e}", consumer.consumer_id)))?;
            if !consumers.insert(&consumer.consumer_id) {
                return invalid(format!("duplicate consumer id `{}`", consumer.consumer_id));
            }
        }

        let mut registered: HashMap<&str, bool> = HashMap::new();
        let mut subscribed: HashMap<&str, bool> = HashMap::new();
        let mut last_at = i64::MIN;
        for (idx, event) in self.timeline.iter().enumerate() {
            if event.at < last_at {
                return invalid(format!("timeline out of order at event {idx} (at {} < {last_at})", event.at));
            }
            last_at = event.at;
            let here = |what: String| ScenarioError::Invalid(format!("event {idx} (at {}): {what}", event.at));
            match &event.kind {
                EventKind::Publish { service, topic, .. } => {
                    let offer = self.offer(service).ok_or_else(|| here(format!("unknown service `{service}`")))?;
                    if !registered.get(service.as_str()).copied().unwrap_or(false) {
                        return Err(here(format!("service `{service}` publishes while not registered")));
                    }
                    if !offer.offers(topic) {
                        return Err(here(format!("service `{service}` does not offer `{topic}`")));
                    }
                }
                EventKind::Register { service } | EventKind::Deregister { service } => {
                    if self.offer(service).is_none() {
                        return Err(here(format!("unknown service `{service}`")));
                    }
                    let want = matches!(event.kind, EventKind::Register { .. });
                    let live = registered.entry(service).or_insert(false);
                    if *live == want {
                        return Err(here(format!(
                            "service `{service}` is already {}",
                            if want { "registered" } else { "deregistered" }
                        )));
                    }
                    *live = want;
                }
                EventKind::Subscribe { consumer } | EventKind::Unsubscribe { consumer } => {
                    if self.consumer(consumer).is_none() {
                        return Err(here(format!("unknown consumer `{consumer}`")));
                    }
                    let want = matches!(event.kind, EventKind::Subscribe { .. });
                    let live = subscribed.entry(consumer).or_insert(false);
                    if *live == want {
                        return Err(here(format!(
                            "consumer `{consumer}` is already {}",
                            if want { "subscribed" } else { "unsubscribed" }
                        )));
                    }
                    *live = want;
                }
                EventKind::Pull { consumer, topic } | EventKind::PullLast { consumer, topic } => {
                    let c = self
                        .consumer(consumer)
                        .ok_or_else(|| here(format!("unknown consumer `{consumer}`")))?;
                    if !subscribed.get(consumer.as_str()).copied().unwrap_or(false) {
                        return Err(here(format!("consumer `{consumer}` pulls while not subscribed")));
                    }
                    if c.profile.topic_index(topic).is_none() {
                        return Err(here(format!("consumer `{consumer}` has no topic `{topic}`")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Topic lists per consumer, in profile order.
    pub fn consumer_topics(&self) -> BTreeMap<String, Vec<TopicId>> {
        self.consumers
            .iter()
            .map(|c| (c.consumer_id.clone(), c.profile.topics.clone()))
            .collect()
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse {
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}
