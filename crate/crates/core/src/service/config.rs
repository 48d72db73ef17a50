//! Service configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::delivery::RetryPolicy;
use super::ServiceError;
use crate::qoc::IndicatorCatalog;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7070";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    /// JSON file holding the [`IndicatorCatalog`].
    pub catalog: PathBuf,
    pub persist: Option<PathBuf>,
    pub log_level: String,
    pub retry: RetryPolicy,
    /// Timeout for one callback push or one upstream pull.
    pub request_timeout_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: DEFAULT_LISTEN.to_string(),
            catalog: PathBuf::from("catalog.json"),
            persist: None,
            log_level: "info".to_string(),
            retry: RetryPolicy::default(),
            request_timeout_ms: 2_000,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_catalog(&self) -> Result<IndicatorCatalog, ServiceError> {
        load_catalog(&self.catalog)
    }
}

pub fn load_catalog(path: &Path) -> Result<IndicatorCatalog, ServiceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ServiceError::Config(format!("catalog {}: {e}", path.display())))?;
    let catalog: IndicatorCatalog = serde_json::from_str(&text)
        .map_err(|e| ServiceError::Config(format!("catalog {}: {e}", path.display())))?;
    catalog
        .validate()
        .map_err(|e| ServiceError::Config(format!("catalog {}: {e}", path.display())))?;
    Ok(catalog)
}
