//! Quality-of-context and quality-of-service model.
//!
//! Every quality figure in the system is a normalized real in `[0, 1]` where
//! 1 is the best quality. Matrices are row-major: one row per topic (in the
//! profile's topic order) and one column per indicator (in catalog order).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid normalization anchors: best and worst are both {0}")]
    InvalidAnchor(f64),
    #[error("raw value {0} is not finite")]
    NonFinite(f64),
    #[error("{what}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("{what} = {value} is outside [0, 1]")]
    OutOfRange { what: String, value: f64 },
    #[error("{what} = {value} is negative")]
    NegativeWeight { what: String, value: f64 },
    #[error("duplicate topic `{0}`")]
    DuplicateTopic(TopicId),
    #[error("duplicate indicator `{0}`")]
    DuplicateIndicator(String),
    #[error("catalog needs at least one {0} indicator")]
    EmptyCatalog(&'static str),
    #[error("profile lists no topics")]
    NoTopics,
    #[error("topic id must not be empty")]
    EmptyTopicId,
    #[error("QoC offer for `{0}` given but topic is not offered")]
    UnofferedTopic(TopicId),
    #[error("offered topic `{0}` has no QoC offer")]
    MissingOffer(TopicId),
    #[error("{0} must not be empty")]
    EmptyId(&'static str),
}

/// Name of a kind of context information, e.g. `location`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicId(String);

impl TopicId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ModelError::EmptyTopicId);
        }
        Ok(TopicId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TopicId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        TopicId::new(value)
    }
}

impl From<TopicId> for String {
    fn from(value: TopicId) -> Self {
        value.0
    }
}

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A normalized quality figure in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QualityValue(f64);

impl QualityValue {
    pub const BEST: QualityValue = QualityValue(1.0);
    pub const WORST: QualityValue = QualityValue(0.0);

    pub fn new(value: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(ModelError::OutOfRange {
                what: "quality value".into(),
                value,
            });
        }
        Ok(QualityValue(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QualityValue {
    type Error = ModelError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        QualityValue::new(value)
    }
}

impl From<QualityValue> for f64 {
    fn from(value: QualityValue) -> Self {
        value.0
    }
}

/// Maps a raw measurement onto `[0, 1]` linearly between two anchors, clamping
/// outside them. `best_raw < worst_raw` is allowed and covers indicators where
/// smaller raw values are better (age in minutes, latency, price).
pub fn normalize_raw(raw: f64, best_raw: f64, worst_raw: f64) -> Result<QualityValue, ModelError> {
    if best_raw == worst_raw || !best_raw.is_finite() || !worst_raw.is_finite() {
        return Err(ModelError::InvalidAnchor(best_raw));
    }
    if !raw.is_finite() {
        return Err(ModelError::NonFinite(raw));
    }
    let t = (raw - worst_raw) / (best_raw - worst_raw);
    Ok(QualityValue(t.clamp(0.0, 1.0)))
}

/// The ordered QoC and QoS indicator names of one broker deployment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorCatalog {
    pub qoc_indicators: Vec<String>,
    pub qos_indicators: Vec<String>,
}

impl IndicatorCatalog {
    pub fn new(qoc: Vec<String>, qos: Vec<String>) -> Result<Self, ModelError> {
        let catalog = IndicatorCatalog {
            qoc_indicators: qoc,
            qos_indicators: qos,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn qoc_len(&self) -> usize {
        self.qoc_indicators.len()
    }

    pub fn qos_len(&self) -> usize {
        self.qos_indicators.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (list, kind) in [(&self.qoc_indicators, "QoC"), (&self.qos_indicators, "QoS")] {
            if list.is_empty() {
                return Err(ModelError::EmptyCatalog(kind));
            }
            let mut seen = HashSet::new();
            for name in list {
                if !seen.insert(name.as_str()) {
                    return Err(ModelError::DuplicateIndicator(name.clone()));
                }
            }
        }
        Ok(())
    }
}

/// What a consumer asks for: per-topic QoC minimums, global QoS minimums and
/// per-(topic, indicator) weights.
///
/// A zero minimum is unconstrained. A profile deserialized without `weights`
/// gets an all-ones matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawProfile")]
pub struct RequirementProfile {
    pub topics: Vec<TopicId>,
    pub qoc_min: Vec<Vec<f64>>,
    pub qos_min: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawProfile {
    topics: Vec<TopicId>,
    qoc_min: Vec<Vec<f64>>,
    qos_min: Vec<f64>,
    #[serde(default)]
    weights: Option<Vec<Vec<f64>>>,
}

impl From<RawProfile> for RequirementProfile {
    fn from(raw: RawProfile) -> Self {
        let weights = raw.weights.unwrap_or_else(|| {
            raw.qoc_min.iter().map(|row| vec![1.0; row.len()]).collect()
        });
        RequirementProfile {
            topics: raw.topics,
            qoc_min: raw.qoc_min,
            qos_min: raw.qos_min,
            weights,
        }
    }
}

impl RequirementProfile {
    /// Profile with all-ones weights.
    pub fn unweighted(topics: Vec<TopicId>, qoc_min: Vec<Vec<f64>>, qos_min: Vec<f64>) -> Self {
        let weights = qoc_min.iter().map(|row| vec![1.0; row.len()]).collect();
        RequirementProfile {
            topics,
            qoc_min,
            qos_min,
            weights,
        }
    }

    pub fn topic_index(&self, topic: &TopicId) -> Option<usize> {
        self.topics.iter().position(|t| t == topic)
    }
}

/// Checks every structural and range invariant of a profile against the
/// catalog. The first violation found is returned.
pub fn validate_profile(
    profile: &RequirementProfile,
    catalog: &IndicatorCatalog,
) -> Result<(), ModelError> {
    let c = profile.topics.len();
    let m = catalog.qoc_len();
    let n = catalog.qos_len();

    if c == 0 {
        return Err(ModelError::NoTopics);
    }
    let mut seen = HashSet::new();
    for topic in &profile.topics {
        if !seen.insert(topic) {
            return Err(ModelError::DuplicateTopic(topic.clone()));
        }
    }

    check_matrix_shape("qoc_min", &profile.qoc_min, c, m)?;
    check_matrix_shape("weights", &profile.weights, c, m)?;
    check_len("qos_min", profile.qos_min.len(), n)?;

    for (j, row) in profile.qoc_min.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            check_unit(|| format!("qoc_min[{j}][{i}]"), v)?;
        }
    }
    for (k, &v) in profile.qos_min.iter().enumerate() {
        check_unit(|| format!("qos_min[{k}]"), v)?;
    }
    for (j, row) in profile.weights.iter().enumerate() {
        for (i, &w) in row.iter().enumerate() {
            if w.is_nan() || w < 0.0 || w.is_infinite() {
                return Err(ModelError::NegativeWeight {
                    what: format!("weights[{j}][{i}]"),
                    value: w,
                });
            }
        }
    }
    Ok(())
}

fn check_len(what: &str, found: usize, expected: usize) -> Result<(), ModelError> {
    if found != expected {
        return Err(ModelError::DimensionMismatch {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_matrix_shape(
    what: &str,
    matrix: &[Vec<f64>],
    rows: usize,
    cols: usize,
) -> Result<(), ModelError> {
    check_len(&format!("{what} rows"), matrix.len(), rows)?;
    for (j, row) in matrix.iter().enumerate() {
        check_len(&format!("{what}[{j}]"), row.len(), cols)?;
    }
    Ok(())
}

fn check_unit(what: impl FnOnce() -> String, v: f64) -> Result<(), ModelError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(ModelError::OutOfRange { what: what(), value: v });
    }
    Ok(())
}

/// A context service's advertised quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceOffer {
    pub service_id: String,
    pub cloud_id: String,
    pub offered_topics: BTreeSet<TopicId>,
    /// One length-m vector per offered topic.
    pub qoc_offer: BTreeMap<TopicId, Vec<f64>>,
    pub qos_offer: Vec<f64>,
}

impl ServiceOffer {
    pub fn offers(&self, topic: &TopicId) -> bool {
        self.offered_topics.contains(topic)
    }

    pub fn validate(&self, catalog: &IndicatorCatalog) -> Result<(), ModelError> {
        if self.service_id.is_empty() {
            return Err(ModelError::EmptyId("service_id"));
        }
        if self.cloud_id.is_empty() {
            return Err(ModelError::EmptyId("cloud_id"));
        }
        for topic in &self.offered_topics {
            if !self.qoc_offer.contains_key(topic) {
                return Err(ModelError::MissingOffer(topic.clone()));
            }
        }
        for (topic, row) in &self.qoc_offer {
            if !self.offered_topics.contains(topic) {
                return Err(ModelError::UnofferedTopic(topic.clone()));
            }
            check_len(&format!("qoc_offer[{topic}]"), row.len(), catalog.qoc_len())?;
            for (i, &v) in row.iter().enumerate() {
                check_unit(|| format!("qoc_offer[{topic}][{i}]"), v)?;
            }
        }
        check_len("qos_offer", self.qos_offer.len(), catalog.qos_len())?;
        for (k, &v) in self.qos_offer.iter().enumerate() {
            check_unit(|| format!("qos_offer[{k}]"), v)?;
        }
        Ok(())
    }
}

/// One published value of one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSample {
    pub topic: TopicId,
    pub payload: serde_json::Value,
    /// Milliseconds since the Unix epoch, UTC.
    pub produced_at: i64,
    pub service_id: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(name: &str) -> TopicId {
        TopicId::new(name).unwrap()
    }

    fn catalog() -> IndicatorCatalog {
        IndicatorCatalog::new(
            vec!["freshness".into(), "correctness".into()],
            vec!["availability".into()],
        )
        .unwrap()
    }

    fn profile() -> RequirementProfile {
        RequirementProfile {
            topics: vec![t("location"), t("temperature")],
            qoc_min: vec![vec![0.8, 0.93], vec![0.5, 0.5]],
            qos_min: vec![0.98],
            weights: vec![vec![0.7, 0.3], vec![1.0, 1.0]],
        }
    }

    // affine map written out independently of normalize_raw
    fn affine_oracle(raw: f64, best: f64, worst: f64) -> f64 {
        let slope = 1.0 / (best - worst);
        (slope * raw - slope * worst).clamp(0.0, 1.0)
    }

    #[test]
    fn freshness_anchors() {
        assert_eq!(normalize_raw(1.0, 1.0, 10.0).unwrap().get(), 1.0);
        assert_eq!(normalize_raw(10.0, 1.0, 10.0).unwrap().get(), 0.0);
        assert_eq!(normalize_raw(0.5, 1.0, 10.0).unwrap().get(), 1.0);
        assert_eq!(normalize_raw(42.0, 1.0, 10.0).unwrap().get(), 0.0);
    }

    #[test]
    fn freshness_midpoint() {
        let expected = affine_oracle(5.5, 1.0, 10.0);
        assert!((expected - 0.5).abs() < 1e-12);
        let got = normalize_raw(5.5, 1.0, 10.0).unwrap().get();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn degenerate_anchors() {
        assert_eq!(
            normalize_raw(3.0, 2.0, 2.0),
            Err(ModelError::InvalidAnchor(2.0))
        );
        assert!(matches!(
            normalize_raw(f64::NAN, 0.0, 1.0),
            Err(ModelError::NonFinite(_))
        ));
    }

    #[test]
    fn profile_accepts_valid_and_unconstrained() {
        validate_profile(&profile(), &catalog()).unwrap();
        let mut p = profile();
        p.qoc_min = vec![vec![0.0, 0.0]; 2];
        p.qos_min = vec![0.0];
        validate_profile(&p, &catalog()).unwrap();
    }

    #[test]
    fn profile_rejects_out_of_range() {
        let mut p = profile();
        p.qoc_min[0][1] = 1.2;
        assert!(matches!(
            validate_profile(&p, &catalog()),
            Err(ModelError::OutOfRange { value, .. }) if value == 1.2
        ));
    }

    #[test]
    fn profile_rejects_extra_weight_row() {
        let mut p = profile();
        p.weights.push(vec![1.0, 1.0]);
        assert!(matches!(
            validate_profile(&p, &catalog()),
            Err(ModelError::DimensionMismatch { expected: 2, found: 3, .. })
        ));
    }

    #[test]
    fn profile_rejects_duplicate_topic_and_negative_weight() {
        let mut p = profile();
        p.topics[1] = t("location");
        assert_eq!(
            validate_profile(&p, &catalog()),
            Err(ModelError::DuplicateTopic(t("location")))
        );
        let mut p = profile();
        p.weights[1][0] = -0.1;
        assert!(matches!(
            validate_profile(&p, &catalog()),
            Err(ModelError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn missing_weights_default_to_ones() {
        let json = r#"{"topics":["a","b"],"qoc_min":[[0.1,0.2],[0.3,0.4]],"qos_min":[0.5]}"#;
        let p: RequirementProfile = serde_json::from_str(json).unwrap();
        assert_eq!(p.weights, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn empty_topic_id_rejected_on_parse() {
        let res: Result<TopicId, _> = serde_json::from_str(r#""""#);
        assert!(res.is_err());
    }

    #[test]
    fn offer_validation() {
        let mut offer = ServiceOffer {
            service_id: "cs1".into(),
            cloud_id: "a".into(),
            offered_topics: [t("location")].into_iter().collect(),
            qoc_offer: [(t("location"), vec![0.9, 0.95])].into_iter().collect(),
            qos_offer: vec![0.99],
        };
        offer.validate(&catalog()).unwrap();
        offer.qos_offer.push(0.5);
        assert!(offer.validate(&catalog()).is_err());
        offer.qos_offer.pop();
        offer.qoc_offer.insert(t("temperature"), vec![0.5, 0.5]);
        assert_eq!(
            offer.validate(&catalog()),
            Err(ModelError::UnofferedTopic(t("temperature")))
        );
    }

    #[test]
    fn catalog_rejects_duplicates_and_empties() {
        assert!(IndicatorCatalog::new(vec!["a".into(), "a".into()], vec!["q".into()]).is_err());
        assert!(IndicatorCatalog::new(vec!["a".into()], vec![]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalized_in_unit_interval(raw in -1e6f64..1e6, best in -1e3f64..1e3, gap in 1e-3f64..1e3, flip: bool) {
                let worst = if flip { best - gap } else { best + gap };
                let v = normalize_raw(raw, best, worst).unwrap().get();
                prop_assert!((0.0..=1.0).contains(&v));
            }

            #[test]
            fn normalize_is_monotone(a in -50f64..50.0, b in -50f64..50.0, best in -10f64..10.0, gap in 0.1f64..20.0, flip: bool) {
                let worst = if flip { best - gap } else { best + gap };
                let (closer, farther) = if (a - best).abs() <= (b - best).abs() { (a, b) } else { (b, a) };
                // only compare points on the same side of best as worst, or beyond best
                let qa = normalize_raw(closer, best, worst).unwrap().get();
                let qb = normalize_raw(farther, best, worst).unwrap().get();
                let toward_worst = |x: f64| (x - best) * (worst - best) >= 0.0;
                if toward_worst(closer) && toward_worst(farther) {
                    prop_assert!(qa >= qb);
                }
            }

            // Mutating one field of a valid profile breaks validation iff the
            // mutation violates an invariant.
            #[test]
            fn single_field_mutation(row in 0usize..2, col in 0usize..2, value in -0.5f64..1.5, which in 0usize..3) {
                let cat = catalog();
                let mut p = profile();
                let valid = match which {
                    0 => { p.qoc_min[row][col] = value; (0.0..=1.0).contains(&value) }
                    1 => { p.qos_min[0] = value; (0.0..=1.0).contains(&value) }
                    _ => { p.weights[row][col] = value; value >= 0.0 }
                };
                prop_assert_eq!(validate_profile(&p, &cat).is_ok(), valid);
            }
        }
    }
}
