//! Client for the ClinicalTrials.gov v2 `studies` endpoint and a resumable
//! harvester that writes records carrying a data-sharing statement.

pub mod client;
pub mod config;
pub mod extract;
pub mod harvest;
#[cfg(feature = "mock")]
pub mod mock;

pub use client::{CtgovClient, FetchError, Page, PageCursor};
pub use config::{ConfigError, CtgovConfig, FieldMapping, API_BASE_ENV, DEFAULT_API_BASE};
pub use extract::{extract_dss, ExtractError};
pub use harvest::{cursor_path, harvest, HarvestError, HarvestOptions, HarvestState, HarvestSummary};
