//! Seeded random scenarios for fuzzing the broker end to end.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{Cloud, Consumer, Event, EventKind, Scenario};
use crate::qoc::{IndicatorCatalog, RequirementProfile, ServiceOffer, TopicId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub seed: u64,
    pub services: usize,
    pub topics: usize,
    pub qoc_indicators: usize,
    pub qos_indicators: usize,
    /// Random events after the initial register/subscribe burst.
    pub events: usize,
    pub consumers: usize,
    pub clouds: usize,
}

impl GenParams {
    pub fn new(seed: u64, services: usize, topics: usize, qoc: usize, qos: usize, events: usize) -> Self {
        GenParams {
            seed,
            services,
            topics,
            qoc_indicators: qoc,
            qos_indicators: qos,
            events,
            consumers: 2,
            clouds: 3,
        }
    }
}

/// Values on a 0.05 grid so equal offers, equal scores and
/// exactly-at-threshold offers all show up.
fn grid(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> f64 {
    rng.random_range(lo..=hi) as f64 / 20.0
}

pub fn random_catalog(m: usize, n: usize) -> IndicatorCatalog {
    IndicatorCatalog {
        qoc_indicators: (1..=m).map(|i| format!("p{i}")).collect(),
        qos_indicators: (1..=n).map(|k| format!("q{k}")).collect(),
    }
}

pub fn topic_names(c: usize) -> Vec<TopicId> {
    (1..=c).map(|j| TopicId::new(format!("t{j}")).unwrap()).collect()
}

pub fn random_offer(rng: &mut ChaCha8Rng, id: String, cloud: String, topics: &[TopicId], m: usize, n: usize) -> ServiceOffer {
    let mut offered: BTreeSet<TopicId> = topics.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
    if offered.is_empty() && !topics.is_empty() {
        offered.insert(topics[rng.random_range(0..topics.len())].clone());
    }
    let qoc_offer: BTreeMap<TopicId, Vec<f64>> = offered
        .iter()
        .map(|t| (t.clone(), (0..m).map(|_| grid(rng, 0, 20)).collect()))
        .collect();
    ServiceOffer {
        service_id: id,
        cloud_id: cloud,
        offered_topics: offered,
        qoc_offer,
        qos_offer: (0..n).map(|_| grid(rng, 8, 20)).collect(),
    }
}

pub fn random_profile(rng: &mut ChaCha8Rng, topics: &[TopicId], m: usize, n: usize) -> RequirementProfile {
    let mut chosen: Vec<TopicId> = topics.iter().filter(|_| rng.random_bool(0.7)).cloned().collect();
    if chosen.is_empty() {
        chosen.push(topics[rng.random_range(0..topics.len())].clone());
    }
    chosen.shuffle(rng);
    let c = chosen.len();
    let qoc_min = (0..c)
        .map(|_| {
            (0..m)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { grid(rng, 0, 16) })
                .collect()
        })
        .collect();
    let qos_min = (0..n)
        .map(|_| if rng.random_bool(0.5) { 0.0 } else { grid(rng, 0, 15) })
        .collect();
    let weights = (0..c)
        .map(|_| (0..m).map(|_| rng.random_range(0..=10) as f64 / 10.0).collect())
        .collect();
    RequirementProfile { topics: chosen, qoc_min, qos_min, weights }
}

pub fn generate_random_scenario(params: GenParams) -> Scenario {
    let GenParams { seed, services, topics, qoc_indicators: m, qos_indicators: n, events, consumers, clouds } = params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let catalog = random_catalog(m.max(1), n.max(1));
    let (m, n) = (catalog.qoc_len(), catalog.qos_len());
    let topic_ids = topic_names(topics.max(1));

    let cloud_ids: Vec<String> = (0..clouds.max(1)).map(|k| format!("cloud-{}", (b'a' + k as u8) as char)).collect();
    let mut cloud_list: Vec<Cloud> = cloud_ids
        .iter()
        .map(|id| Cloud { cloud_id: id.clone(), offers: Vec::new() })
        .collect();
    for r in 1..=services {
        let k = rng.random_range(0..cloud_list.len());
        let offer = random_offer(&mut rng, format!("cs{r}"), cloud_list[k].cloud_id.clone(), &topic_ids, m, n);
        cloud_list[k].offers.push(offer);
    }
    cloud_list.retain(|c| !c.offers.is_empty());

    let consumer_list: Vec<Consumer> = (1..=consumers.max(1))
        .map(|i| Consumer {
            consumer_id: format!("consumer{i}"),
            profile: random_profile(&mut rng, &topic_ids, m, n),
        })
        .collect();

    let offers: Vec<ServiceOffer> = cloud_list.iter().flat_map(|c| c.offers.iter().cloned()).collect();
    let mut timeline = Vec::new();
    let mut live_services: BTreeSet<String> = BTreeSet::new();
    let mut live_consumers: BTreeSet<String> = BTreeSet::new();
    for o in &offers {
        timeline.push(Event { at: 0, kind: EventKind::Register { service: o.service_id.clone() } });
        live_services.insert(o.service_id.clone());
    }
    for c in &consumer_list {
        timeline.push(Event { at: 1, kind: EventKind::Subscribe { consumer: c.consumer_id.clone() } });
        live_consumers.insert(c.consumer_id.clone());
    }

    let mut at = 1i64;
    for _ in 0..events {
        at += rng.random_range(1..=3);
        let roll: f64 = rng.random();
        let kind = if roll < 0.5 && !live_services.is_empty() {
            let live: Vec<&String> = live_services.iter().collect();
            let service = live[rng.random_range(0..live.len())].clone();
            let offer = offers.iter().find(|o| o.service_id == service).unwrap();
            let offered: Vec<&TopicId> = offer.offered_topics.iter().collect();
            let topic = offered[rng.random_range(0..offered.len())].clone();
            EventKind::Publish { service, topic, payload: None }
        } else if roll < 0.7 && !live_consumers.is_empty() {
            let live: Vec<&String> = live_consumers.iter().collect();
            let consumer = live[rng.random_range(0..live.len())].clone();
            let profile = &consumer_list.iter().find(|c| c.consumer_id == consumer).unwrap().profile;
            let topic = profile.topics[rng.random_range(0..profile.topics.len())].clone();
            if rng.random_bool(0.75) {
                EventKind::Pull { consumer, topic }
            } else {
                EventKind::PullLast { consumer, topic }
            }
        } else if roll < 0.85 && !offers.is_empty() {
            let service = offers[rng.random_range(0..offers.len())].service_id.clone();
            if live_services.remove(&service) {
                EventKind::Deregister { service }
            } else {
                live_services.insert(service.clone());
                EventKind::Register { service }
            }
        } else {
            let consumer = consumer_list[rng.random_range(0..consumer_list.len())].consumer_id.clone();
            if live_consumers.remove(&consumer) {
                EventKind::Unsubscribe { consumer }
            } else {
                live_consumers.insert(consumer.clone());
                EventKind::Subscribe { consumer }
            }
        };
        timeline.push(Event { at, kind });
    }

    Scenario {
        seed,
        catalog,
        clouds: cloud_list,
        consumers: consumer_list,
        timeline,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scenario() {
        let p = GenParams::new(1, 5, 3, 3, 2, 40);
        let a = serde_json::to_string(&generate_random_scenario(p)).unwrap();
        let b = serde_json::to_string(&generate_random_scenario(p)).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&generate_random_scenario(GenParams { seed: 2, ..p })).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_scenarios_validate() {
        for seed in 0..50 {
            let s = generate_random_scenario(GenParams::new(seed, (seed % 11) as usize, 5, 5, 4, 60));
            s.validate().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        }
    }

    #[test]
    fn no_services() {
        let s = generate_random_scenario(GenParams::new(4, 0, 2, 2, 1, 10));
        s.validate().unwrap();
        assert!(s.clouds.is_empty());
    }

    #[test]
    fn oracle_bounds_accepted() {
        let s = generate_random_scenario(GenParams::new(9, 12, 6, 6, 5, 100));
        s.validate().unwrap();
        assert_eq!(s.all_offers().len(), 12);
        assert_eq!(s.catalog.qoc_len(), 6);
    }
}
