//! Request/response envelopes shared by the HTTP surface and the push channel.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::broker::{BrokerError, ErrorCode};
use crate::qoc::{ContextSample, RequirementProfile, ServiceOffer, TopicId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Subscribe,
    Unsubscribe,
    Register,
    Deregister,
    Notify,
    PullCurrent,
    PullLast,
    FindServices,
    FindConsumers,
    Decision,
    Advisory,
    Ack,
    Error,
    #[serde(other)]
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEnvelope {
    pub kind: Kind,
    pub request_id: String,
    #[serde(default)]
    pub body: Value,
}

impl WireEnvelope {
    pub fn new(kind: Kind, request_id: impl Into<String>, body: impl Serialize) -> Self {
        WireEnvelope {
            kind,
            request_id: request_id.into(),
            body: serde_json::to_value(body).expect("body serializes"),
        }
    }

    pub fn ack(request_id: &str, body: impl Serialize) -> Self {
        WireEnvelope::new(Kind::Ack, request_id, body)
    }

    pub fn error(request_id: &str, error: ErrorBody) -> Self {
        WireEnvelope::new(Kind::Error, request_id, error)
    }

    /// The error body, if this is an error envelope.
    pub fn as_error(&self) -> Option<ErrorBody> {
        match self.kind {
            Kind::Error => serde_json::from_value(self.body.clone()).ok(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topics: Vec<TopicId>,
}

impl ErrorBody {
    pub fn bad_request(message: impl Into<String>) -> Self {
        ErrorBody {
            code: ErrorCode::BadRequest,
            message: message.into(),
            topics: Vec::new(),
        }
    }
}

impl From<&BrokerError> for ErrorBody {
    fn from(err: &BrokerError) -> Self {
        ErrorBody {
            code: err.code(),
            message: err.to_string(),
            topics: err.advisory_topics().map(<[_]>::to_vec).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscribeRequest {
    pub consumer_id: String,
    pub profile: RequirementProfile,
    pub callback_address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscribeAck {
    pub subscription_id: String,
    /// Topics no registered service can currently serve.
    #[serde(default)]
    pub renegotiation: Vec<TopicId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub offer: ServiceOffer,
    pub service_address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterAck {
    pub registration_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscriptionRef {
    pub subscription_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRef {
    pub registration_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicQuery {
    pub subscription_id: String,
    pub topic: TopicId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRef {
    pub topic: TopicId,
}

/// Body of a push to a consumer callback (`notify` kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationBody {
    pub subscription_id: String,
    pub sample: ContextSample,
}

/// Body of a push to a consumer callback (`advisory` kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisoryBody {
    pub subscription_id: String,
    pub topics: Vec<TopicId>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_parses_as_unsupported() {
        let env: WireEnvelope = serde_json::from_str(r#"{"kind":"teleport","request_id":"r1"}"#).unwrap();
        assert_eq!(env.kind, Kind::Unsupported);
        assert_eq!(env.body, Value::Null);
    }

    #[test]
    fn kinds_are_kebab_case() {
        let env = WireEnvelope::new(Kind::PullCurrent, "r", ());
        assert_eq!(serde_json::to_value(&env).unwrap()["kind"], "pull-current");
    }

    #[test]
    fn error_body_carries_code() {
        let env = WireEnvelope::error("r9", ErrorBody::bad_request("nope"));
        let json = serde_json::to_value(&env).unwrap();
        assert_eq!(json["body"]["code"], "BAD_REQUEST");
        assert_eq!(env.as_error().unwrap().code, ErrorCode::BadRequest);
    }
}
