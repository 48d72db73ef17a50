//! Shared instance generators for the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ctxbroker::qoc::{ContextSample, IndicatorCatalog, RequirementProfile, ServiceOffer, TopicId};
use ctxbroker::selection::DecisionMatrix;
use ctxbroker::sim::gen::{random_catalog, random_offer, random_profile, topic_names};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub struct Instance {
    pub catalog: IndicatorCatalog,
    pub offers: Vec<ServiceOffer>,
    pub profile: RequirementProfile,
}

/// Up to 10 services, 5 topics, 5 QoC and 4 QoS indicators, spread over
/// `clouds` clouds.
pub fn random_instance(rng: &mut ChaCha8Rng, clouds: usize) -> Instance {
    let k = rng.random_range(0..=10);
    let c = rng.random_range(1..=5);
    let m = rng.random_range(1..=5);
    let n = rng.random_range(1..=4);
    let catalog = random_catalog(m, n);
    let topics = topic_names(c);
    let offers = (1..=k)
        .map(|r| {
            let cloud = format!("cloud{}", rng.random_range(0..clouds.max(1)));
            random_offer(rng, format!("s{r:02}"), cloud, &topics, m, n)
        })
        .collect();
    let profile = random_profile(rng, &topics, m, n);
    Instance { catalog, offers, profile }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Services whose score is within tolerance of the best feasible score.
pub fn tie_set(d: &DecisionMatrix, j: usize) -> BTreeSet<String> {
    if d.selected[j].is_none() {
        return BTreeSet::new();
    }
    (0..d.services.len())
        .filter(|&r| d.feasible[j][r] && (d.max_score[j] - d.scores[j][r]).abs() <= 1e-12 * d.max_score[j].abs().max(1.0))
        .map(|r| d.services[r].clone())
        .collect()
}

/// Describes the first difference between two decisions, if any.
pub fn decision_diff(a: &DecisionMatrix, b: &DecisionMatrix, tol: f64) -> Option<String> {
    if a.topics != b.topics {
        return Some(format!("topics {:?} vs {:?}", a.topics, b.topics));
    }
    if a.services != b.services {
        return Some(format!("services {:?} vs {:?}", a.services, b.services));
    }
    if a.selected != b.selected {
        return Some(format!("selected {:?} vs {:?}", a.selected, b.selected));
    }
    if a.feasible != b.feasible {
        return Some(format!("feasible {:?} vs {:?}", a.feasible, b.feasible));
    }
    for j in 0..a.topics.len() {
        if (a.max_score[j] - b.max_score[j]).abs() > tol {
            return Some(format!("max score for {}: {} vs {}", a.topics[j], a.max_score[j], b.max_score[j]));
        }
        for r in 0..a.services.len() {
            if (a.scores[j][r] - b.scores[j][r]).abs() > tol {
                return Some(format!("score {}/{}: {} vs {}", a.topics[j], a.services[r], a.scores[j][r], b.scores[j][r]));
            }
        }
    }
    None
}

/// Arbitrary (not grid) values, for wire round-trips.
pub fn arbitrary_profile(rng: &mut ChaCha8Rng) -> RequirementProfile {
    let c = rng.random_range(1..=5);
    let m = rng.random_range(1..=5);
    let n = rng.random_range(0..=4);
    let topics: Vec<TopicId> = (0..c).map(|j| TopicId::new(format!("topic-{j}-{}", rng.random::<u16>())).unwrap()).collect();
    RequirementProfile {
        topics,
        qoc_min: (0..c).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect(),
        qos_min: (0..n).map(|_| rng.random::<f64>()).collect(),
        weights: (0..c).map(|_| (0..m).map(|_| rng.random::<f64>() * 10.0).collect()).collect(),
    }
}

pub fn arbitrary_offer(rng: &mut ChaCha8Rng) -> ServiceOffer {
    let m = rng.random_range(1..=5);
    let n = rng.random_range(0..=4);
    let offered: BTreeSet<TopicId> = (0..rng.random_range(1..=5))
        .map(|j| TopicId::new(format!("t{j}\u{e9}{}", rng.random::<u8>())).unwrap())
        .collect();
    let qoc_offer: BTreeMap<TopicId, Vec<f64>> = offered
        .iter()
        .map(|t| (t.clone(), (0..m).map(|_| rng.random::<f64>()).collect()))
        .collect();
    ServiceOffer {
        service_id: format!("svc-{}", rng.random::<u32>()),
        cloud_id: format!("cloud \"{}\"", rng.random::<u8>()),
        offered_topics: offered,
        qoc_offer,
        qos_offer: (0..n).map(|_| rng.random::<f64>()).collect(),
    }
}

fn arbitrary_payload(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    match rng.random_range(0..if depth == 0 { 5 } else { 7 }) {
        0 => Value::Null,
        1 => json!(rng.random_bool(0.5)),
        2 => json!(rng.random::<i64>()),
        3 => json!(rng.random::<f64>() * 1e6 - 5e5),
        4 => json!(format!("tok\n\t{}\u{1F600}", rng.random::<u32>())),
        5 => Value::Array((0..rng.random_range(0..4)).map(|_| arbitrary_payload(rng, depth - 1)).collect()),
        _ => Value::Object(
            (0..rng.random_range(0..4))
                .map(|i| (format!("k{i}"), arbitrary_payload(rng, depth - 1)))
                .collect(),
        ),
    }
}

pub fn arbitrary_sample(rng: &mut ChaCha8Rng) -> ContextSample {
    ContextSample {
        topic: TopicId::new(format!("topic/{}", rng.random::<u16>())).unwrap(),
        payload: arbitrary_payload(rng, 3),
        produced_at: rng.random(),
        service_id: format!("s{}", rng.random::<u16>()),
    }
}
