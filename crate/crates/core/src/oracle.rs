//! Brute-force reference selection used to cross-check the matrix pipeline.
//!
//! Every (service, topic) pair is visited directly: the admission inequality
//! is tested on raw values, the weighted sum is accumulated with index loops
//! and the argmax is a plain scan. Nothing here calls into
//! [`crate::selection`].

use crate::qoc::{RequirementProfile, ServiceOffer};
use crate::selection::{DecisionMatrix, TIE_TOLERANCE};

/// Recomputes the decision matrix for small instances.
#[allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
pub fn oracle_select(offers: &[ServiceOffer], profile: &RequirementProfile) -> DecisionMatrix {
    let c = profile.topics.len();

    let mut admitted: Vec<&ServiceOffer> = Vec::new();
    for offer in offers {
        let mut qos_ok = true;
        for k in 0..profile.qos_min.len() {
            if offer.qos_offer[k] < profile.qos_min[k] {
                qos_ok = false;
            }
        }
        if qos_ok {
            admitted.push(offer);
        }
    }
    admitted.sort_by(|a, b| a.service_id.cmp(&b.service_id));

    let mut scores = vec![vec![0.0; admitted.len()]; c];
    let mut feasible = vec![vec![false; admitted.len()]; c];
    for (r, offer) in admitted.iter().enumerate() {
        for j in 0..c {
            let topic = &profile.topics[j];
            if !offer.offered_topics.contains(topic) {
                continue;
            }
            let q = &offer.qoc_offer[topic];
            let mut ok = true;
            for i in 0..profile.qoc_min[j].len() {
                if !(profile.qoc_min[j][i] <= q[i]) {
                    ok = false;
                }
            }
            if !ok {
                continue;
            }
            let mut total = 0.0;
            for i in 0..q.len() {
                total += profile.weights[j][i] * q[i];
            }
            scores[j][r] = total;
            feasible[j][r] = true;
        }
    }

    let mut max_score = vec![0.0; c];
    let mut selected = vec![None; c];
    for j in 0..c {
        let mut best: Option<f64> = None;
        for r in 0..admitted.len() {
            if feasible[j][r] && best.is_none_or(|b| scores[j][r] > b) {
                best = Some(scores[j][r]);
            }
        }
        if let Some(best) = best {
            max_score[j] = best;
            // admitted is sorted, so the first hit is the smallest id
            for r in 0..admitted.len() {
                if feasible[j][r] && scores[j][r] >= best - TIE_TOLERANCE {
                    selected[j] = Some(admitted[r].service_id.clone());
                    break;
                }
            }
        }
    }

    DecisionMatrix {
        topics: profile.topics.clone(),
        services: admitted.iter().map(|o| o.service_id.clone()).collect(),
        scores,
        feasible,
        max_score,
        selected,
    }
}
