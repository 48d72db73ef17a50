//! Weighted multi-attribute selection of context services.
//!
//! For a consumer profile and a set of service offers the engine builds, per
//! service, the weighted score matrix `w * q`, filters out services that miss
//! any QoS minimum, marks a topic infeasible for a service when any QoC offer
//! for it falls below the consumer's minimum, sums the remaining rows into
//! per-topic scores and finally picks the highest-scoring feasible service
//! per topic.
//!
//! Feasibility is decided on the raw `q >= min` comparisons so a zero weight
//! cannot hide a threshold violation. Score ties within [`TIE_TOLERANCE`] go
//! to the lexicographically smallest service id.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qoc::{RequirementProfile, ServiceOffer, TopicId};

pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("topic `{0}` is not part of the profile")]
    NotSubscribed(TopicId),
    #[error("service id `{0}` appears more than once")]
    DuplicateService(String),
}

fn dim(what: impl Into<String>, expected: usize, found: usize) -> Result<(), SelectionError> {
    if expected != found {
        return Err(SelectionError::Dimension {
            what: what.into(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Weighted scores of one offer (or of the consumer minimums, when
/// `service_id` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub service_id: Option<String>,
    pub entries: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScoreVector {
    pub service_id: String,
    pub scores: Vec<f64>,
    pub feasible: Vec<bool>,
}

/// Topic-by-service score table plus the per-topic winner.
///
/// Columns are sorted by service id and hold only QoS-feasible services.
/// `feasible[j][r]` records whether service `r` may serve topic `j`; a
/// feasible entry can still score 0 when all its weights are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMatrix {
    pub topics: Vec<TopicId>,
    pub services: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub feasible: Vec<Vec<bool>>,
    pub max_score: Vec<f64>,
    pub selected: Vec<Option<String>>,
}

impl DecisionMatrix {
    pub fn selected_for(&self, topic: &TopicId) -> Option<&str> {
        let j = self.topics.iter().position(|t| t == topic)?;
        self.selected[j].as_deref()
    }

    pub fn is_feasible(&self, topic: &TopicId, service_id: &str) -> bool {
        let Some(j) = self.topics.iter().position(|t| t == topic) else {
            return false;
        };
        match self.services.iter().position(|s| s == service_id) {
            Some(r) => self.feasible[j][r],
            None => false,
        }
    }
}

/// True iff the offer meets every QoS minimum of the profile.
pub fn qos_feasible(offer: &ServiceOffer, profile: &RequirementProfile) -> Result<bool, SelectionError> {
    dim(
        format!("qos_offer of {}", offer.service_id),
        profile.qos_min.len(),
        offer.qos_offer.len(),
    )?;
    Ok(offer
        .qos_offer
        .iter()
        .zip(&profile.qos_min)
        .all(|(q, min)| q >= min))
}

/// True iff the offer serves `topic` and meets every QoC minimum for it.
pub fn qoc_feasible(
    offer: &ServiceOffer,
    profile: &RequirementProfile,
    topic: &TopicId,
) -> Result<bool, SelectionError> {
    let j = profile
        .topic_index(topic)
        .ok_or_else(|| SelectionError::NotSubscribed(topic.clone()))?;
    qoc_feasible_row(offer, profile, j)
}

fn qoc_feasible_row(
    offer: &ServiceOffer,
    profile: &RequirementProfile,
    j: usize,
) -> Result<bool, SelectionError> {
    let mins = &profile.qoc_min[j];
    let Some(row) = offer.qoc_offer.get(&profile.topics[j]) else {
        return Ok(false);
    };
    if !offer.offers(&profile.topics[j]) {
        return Ok(false);
    }
    dim(
        format!("qoc_offer of {} for {}", offer.service_id, profile.topics[j]),
        mins.len(),
        row.len(),
    )?;
    Ok(row.iter().zip(mins).all(|(q, min)| q >= min))
}

/// The offer's QoC values laid out on the profile's topics. Unoffered topics
/// get a zero row.
pub fn offer_matrix(offer: &ServiceOffer, profile: &RequirementProfile) -> Result<Vec<Vec<f64>>, SelectionError> {
    profile
        .topics
        .iter()
        .zip(&profile.qoc_min)
        .map(|(topic, mins)| match offer.qoc_offer.get(topic) {
            Some(row) if offer.offers(topic) => {
                dim(
                    format!("qoc_offer of {} for {topic}", offer.service_id),
                    mins.len(),
                    row.len(),
                )?;
                Ok(row.clone())
            }
            _ => Ok(vec![0.0; mins.len()]),
        })
        .collect()
}

/// Entrywise `weights * quality`.
pub fn score_matrix(
    weights: &[Vec<f64>],
    quality: &[Vec<f64>],
    service_id: Option<String>,
) -> Result<ScoreMatrix, SelectionError> {
    dim("score matrix rows", weights.len(), quality.len())?;
    let entries = weights
        .iter()
        .zip(quality)
        .enumerate()
        .map(|(j, (w_row, q_row))| {
            dim(format!("score matrix row {j}"), w_row.len(), q_row.len())?;
            Ok(w_row.iter().zip(q_row).map(|(w, q)| w * q).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, SelectionError>>()?;
    Ok(ScoreMatrix { service_id, entries })
}

/// The consumer's minimum score matrix, `weights * qoc_min`.
pub fn min_score_matrix(profile: &RequirementProfile) -> Result<ScoreMatrix, SelectionError> {
    score_matrix(&profile.weights, &profile.qoc_min, None)
}

/// `s_r - s_min`. A negative entry flags a QoC shortfall for that topic and
/// indicator (only reliable where the weight is positive).
pub fn difference_matrix(s_r: &ScoreMatrix, s_min: &ScoreMatrix) -> Result<Vec<Vec<f64>>, SelectionError> {
    dim("difference matrix rows", s_min.entries.len(), s_r.entries.len())?;
    s_r.entries
        .iter()
        .zip(&s_min.entries)
        .enumerate()
        .map(|(j, (a, b))| {
            dim(format!("difference matrix row {j}"), b.len(), a.len())?;
            Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
        })
        .collect()
}

/// Per-topic score of one offer: the row sum of its score matrix where the
/// topic is QoC-feasible, 0 elsewhere. The caller has already applied the QoS
/// filter.
pub fn topic_scores(offer: &ServiceOffer, profile: &RequirementProfile) -> Result<TopicScoreVector, SelectionError> {
    let quality = offer_matrix(offer, profile)?;
    let s_r = score_matrix(&profile.weights, &quality, Some(offer.service_id.clone()))?;
    let mut scores = Vec::with_capacity(profile.topics.len());
    let mut feasible = Vec::with_capacity(profile.topics.len());
    for (j, row) in s_r.entries.iter().enumerate() {
        let ok = qoc_feasible_row(offer, profile, j)?;
        feasible.push(ok);
        scores.push(if ok { row.iter().sum() } else { 0.0 });
    }
    Ok(TopicScoreVector {
        service_id: offer.service_id.clone(),
        scores,
        feasible,
    })
}

fn check_profile_shape(profile: &RequirementProfile) -> Result<(), SelectionError> {
    let c = profile.topics.len();
    dim("qoc_min rows", c, profile.qoc_min.len())?;
    dim("weights rows", c, profile.weights.len())?;
    for (j, (mins, ws)) in profile.qoc_min.iter().zip(&profile.weights).enumerate() {
        dim(format!("weights row {j}"), mins.len(), ws.len())?;
    }
    Ok(())
}

/// Picks the winner among `(service, score)` candidates: highest score, ties
/// within tolerance resolved by smallest id. Returns the exact max too.
fn pick_winner<'a>(candidates: impl Iterator<Item = (&'a str, f64)> + Clone) -> (f64, Option<String>) {
    let Some(max) = candidates.clone().map(|(_, s)| s).reduce(f64::max) else {
        return (0.0, None);
    };
    let winner = candidates
        .filter(|(_, s)| *s >= max - TIE_TOLERANCE)
        .map(|(id, _)| id)
        .min();
    (max, winner.map(str::to_string))
}

fn finish_rows(
    topics: Vec<TopicId>,
    columns: Vec<TopicScoreVector>,
) -> DecisionMatrix {
    let c = topics.len();
    let services: Vec<String> = columns.iter().map(|v| v.service_id.clone()).collect();
    let mut scores = vec![Vec::with_capacity(columns.len()); c];
    let mut feasible = vec![Vec::with_capacity(columns.len()); c];
    for col in &columns {
        for j in 0..c {
            scores[j].push(col.scores[j]);
            feasible[j].push(col.feasible[j]);
        }
    }
    let mut max_score = Vec::with_capacity(c);
    let mut selected = Vec::with_capacity(c);
    for j in 0..c {
        let candidates = services
            .iter()
            .zip(&scores[j])
            .zip(&feasible[j])
            .filter(|(_, ok)| **ok)
            .map(|((id, s), _)| (id.as_str(), *s));
        let (max, winner) = pick_winner(candidates);
        max_score.push(max);
        selected.push(winner);
    }
    DecisionMatrix {
        topics,
        services,
        scores,
        feasible,
        max_score,
        selected,
    }
}

/// Scores every QoS-feasible offer against the profile and selects the best
/// service per topic.
pub fn build_decision_matrix(
    offers: &[ServiceOffer],
    profile: &RequirementProfile,
) -> Result<DecisionMatrix, SelectionError> {
    check_profile_shape(profile)?;
    let mut seen = HashSet::new();
    for offer in offers {
        if !seen.insert(offer.service_id.as_str()) {
            return Err(SelectionError::DuplicateService(offer.service_id.clone()));
        }
    }

    let mut columns = Vec::new();
    for offer in offers {
        if !qos_feasible(offer, profile)? {
            continue;
        }
        columns.push(topic_scores(offer, profile)?);
    }
    columns.sort_by(|a, b| a.service_id.cmp(&b.service_id));
    Ok(finish_rows(profile.topics.clone(), columns))
}

/// Runs the selection inside each cloud, then ranks the per-cloud winners to
/// pick the global winner per topic. Score columns of every cloud are merged
/// into the returned matrix.
pub fn select_multi_cloud(
    clouds: &[(String, Vec<ServiceOffer>)],
    profile: &RequirementProfile,
) -> Result<DecisionMatrix, SelectionError> {
    check_profile_shape(profile)?;
    let mut seen = HashSet::new();
    for (_, offers) in clouds {
        for offer in offers {
            if !seen.insert(offer.service_id.as_str()) {
                return Err(SelectionError::DuplicateService(offer.service_id.clone()));
            }
        }
    }

    let per_cloud = clouds
        .iter()
        .map(|(_, offers)| build_decision_matrix(offers, profile))
        .collect::<Result<Vec<_>, _>>()?;

    let c = profile.topics.len();
    // merge columns in service-id order
    let mut merged: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (k, dm) in per_cloud.iter().enumerate() {
        for (r, id) in dm.services.iter().enumerate() {
            merged.insert(id, (k, r));
        }
    }
    let services: Vec<String> = merged.keys().map(|s| s.to_string()).collect();
    let mut scores = vec![Vec::with_capacity(services.len()); c];
    let mut feasible = vec![Vec::with_capacity(services.len()); c];
    for &(k, r) in merged.values() {
        for j in 0..c {
            scores[j].push(per_cloud[k].scores[j][r]);
            feasible[j].push(per_cloud[k].feasible[j][r]);
        }
    }

    let mut max_score = Vec::with_capacity(c);
    let mut selected = Vec::with_capacity(c);
    for j in 0..c {
        let winners = per_cloud.iter().filter_map(|dm| {
            dm.selected[j]
                .as_deref()
                .map(|id| (id, dm.max_score[j]))
        });
        let (max, winner) = pick_winner(winners);
        max_score.push(max);
        selected.push(winner);
    }

    Ok(DecisionMatrix {
        topics: profile.topics.clone(),
        services,
        scores,
        feasible,
        max_score,
        selected,
    })
}

/// Groups offers by `cloud_id`, preserving first-seen cloud order.
pub fn group_by_cloud(offers: &[ServiceOffer]) -> Vec<(String, Vec<ServiceOffer>)> {
    let mut clouds: Vec<(String, Vec<ServiceOffer>)> = Vec::new();
    for offer in offers {
        match clouds.iter_mut().find(|(id, _)| *id == offer.cloud_id) {
            Some((_, list)) => list.push(offer.clone()),
            None => clouds.push((offer.cloud_id.clone(), vec![offer.clone()])),
        }
    }
    clouds
}

/// Topics nobody can currently serve, in profile order.
pub fn renegotiation_report(decision: &DecisionMatrix) -> Vec<TopicId> {
    decision
        .topics
        .iter()
        .zip(&decision.selected)
        .filter(|(_, sel)| sel.is_none())
        .map(|(t, _)| t.clone())
        .collect()
}
