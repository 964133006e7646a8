use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Overrides the API base URL (tests point it at a local mock).
pub const API_BASE_ENV: &str = "CTGOV_API_BASE";
pub const DEFAULT_API_BASE: &str = "https://clinicaltrials.gov/api/v2";
pub const MAX_PAGE_SIZE: usize = 1000;

/// Dotted JSON paths of the fields read from each study document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub nct_id: String,
    pub category: String,
    pub description: String,
    pub first_posted: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            nct_id: "protocolSection.identificationModule.nctId".into(),
            category: "protocolSection.ipdSharingStatementModule.ipdSharing".into(),
            description: "protocolSection.ipdSharingStatementModule.description".into(),
            first_posted: "protocolSection.statusModule.studyFirstPostDateStruct.date".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtgovConfig {
    pub base_url: String,
    pub page_size: usize,
    pub requests_per_second: f64,
    /// Retries after the first attempt before a transient failure surfaces.
    pub retry_budget: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub request_timeout_secs: u64,
    /// Pages fetched ahead of the page being committed.
    pub concurrency: usize,
    pub fields: FieldMapping,
}

impl Default for CtgovConfig {
    fn default() -> Self {
        CtgovConfig {
            base_url: DEFAULT_API_BASE.into(),
            page_size: 100,
            requests_per_second: 3.0,
            retry_budget: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            request_timeout_secs: 60,
            concurrency: 2,
            fields: FieldMapping::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("ctgov config: {0}")]
pub struct ConfigError(pub String);

impl CtgovConfig {
    /// Defaults with the base URL taken from `CTGOV_API_BASE` when set.
    pub fn from_env() -> Self {
        let mut c = CtgovConfig::default();
        c.apply_env();
        c
    }

    pub fn apply_env(&mut self) {
        if let Ok(base) = std::env::var(API_BASE_ENV) {
            if !base.is_empty() {
                self.base_url = base;
            }
        }
    }

    /// Reads the `[ctgov]` table of a TOML file (other tables are ignored).
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        struct Wrapped {
            #[serde(default)]
            ctgov: CtgovConfig,
        }
        let w: Wrapped = toml::from_str(s).map_err(|e| ConfigError(e.to_string()))?;
        w.ctgov.validate()?;
        Ok(w.ctgov)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.page_size == 0 || self.page_size > MAX_PAGE_SIZE {
            return Err(ConfigError(format!("page_size must be within 1..={MAX_PAGE_SIZE}")));
        }
        if !(self.requests_per_second > 0.0) {
            return Err(ConfigError("requests_per_second must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(ConfigError("concurrency must be at least 1".into()));
        }
        Ok(())
    }

    pub fn min_request_interval(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.requests_per_second)
    }

    /// Backoff before retry number `attempt` (0-based), doubling up to the cap.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}
