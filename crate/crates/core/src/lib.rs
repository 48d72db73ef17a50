//! Context broker: topic-based publish/subscribe between context services and
//! context consumers, with per-topic service selection driven by the
//! consumer's quality-of-context and quality-of-service requirements.

pub mod broker;
pub mod oracle;
pub mod qoc;
pub mod selection;
pub mod service;
pub mod sim;

pub use broker::{Broker, BrokerError, ErrorCode};
pub use qoc::{ContextSample, IndicatorCatalog, QualityValue, RequirementProfile, ServiceOffer, TopicId};
pub use selection::DecisionMatrix;
