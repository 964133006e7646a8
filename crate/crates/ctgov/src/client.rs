use std::time::Duration;

use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Mutex;
use tokio::time::Instant;

use crate::config::CtgovConfig;

/// Opaque continuation token plus the page size it was requested with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageCursor {
    /// `None` requests the first page.
    pub token: Option<String>,
    pub page_size: usize,
}

impl PageCursor {
    pub fn first(page_size: usize) -> Self {
        PageCursor { token: None, page_size }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub studies: Vec<Value>,
    /// Absent on the last page.
    pub next_page_token: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("request failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("registry returned {status}: {excerpt}")]
    Status { status: u16, excerpt: String },
    #[error("malformed registry response: {reason}; body starts {excerpt:?}")]
    Malformed { reason: String, excerpt: String },
    #[error("http client: {0}")]
    Client(String),
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::RetriesExhausted { .. })
    }
}

const EXCERPT_CHARS: usize = 200;

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_CHARS).collect()
}

#[derive(Deserialize)]
struct RawPage {
    studies: Vec<Value>,
    #[serde(rename = "nextPageToken")]
    next_page_token: Option<String>,
}

fn parse_page(body: &str) -> Result<Page, FetchError> {
    let raw: RawPage = serde_json::from_str(body).map_err(|e| FetchError::Malformed {
        reason: e.to_string(),
        excerpt: excerpt(body),
    })?;
    Ok(Page {
        studies: raw.studies,
        next_page_token: raw.next_page_token.filter(|t| !t.is_empty()),
    })
}

/// Seconds form of `Retry-After`; HTTP-date values fall back to backoff.
fn retry_after(resp: &reqwest::Response) -> Option<Duration> {
    resp.headers()
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<u64>()
        .ok()
        .map(Duration::from_secs)
}

enum Attempt {
    Done(Page),
    Retry { wait: Option<Duration>, reason: String },
}

/// Rate-limited, retrying client for the `studies` endpoint.
pub struct CtgovClient {
    http: reqwest::Client,
    config: CtgovConfig,
    next_slot: Mutex<Option<Instant>>,
}

impl CtgovClient {
    pub fn new(config: CtgovConfig) -> Result<Self, FetchError> {
        config.validate().map_err(|e| FetchError::Client(e.to_string()))?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .user_agent(concat!("dss-ctgov/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| FetchError::Client(e.to_string()))?;
        Ok(CtgovClient {
            http,
            config,
            next_slot: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &CtgovConfig {
        &self.config
    }

    /// Waits until the next request slot allowed by the rate limit.
    async fn throttle(&self) {
        let interval = self.config.min_request_interval();
        let mut slot = self.next_slot.lock().await;
        let now = Instant::now();
        let start = match *slot {
            Some(t) if t > now => t,
            _ => now,
        };
        *slot = Some(start + interval);
        drop(slot);
        tokio::time::sleep_until(start).await;
    }

    fn url(&self) -> String {
        format!("{}/studies", self.config.base_url.trim_end_matches('/'))
    }

    async fn attempt(&self, cursor: &PageCursor) -> Result<Attempt, FetchError> {
        self.throttle().await;
        let mut query: Vec<(&str, String)> = vec![
            ("format", "json".into()),
            ("pageSize", cursor.page_size.to_string()),
        ];
        if let Some(t) = &cursor.token {
            query.push(("pageToken", t.clone()));
        }
        let resp = match self.http.get(self.url()).query(&query).send().await {
            Ok(r) => r,
            Err(e) if e.is_builder() => return Err(FetchError::Client(e.to_string())),
            Err(e) => {
                return Ok(Attempt::Retry {
                    wait: None,
                    reason: e.to_string(),
                })
            }
        };
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Ok(Attempt::Retry {
                wait: retry_after(&resp),
                reason: "429 Too Many Requests".into(),
            });
        }
        if status.is_server_error() {
            return Ok(Attempt::Retry {
                wait: None,
                reason: format!("server error {status}"),
            });
        }
        let body = match resp.text().await {
            Ok(b) => b,
            Err(e) => {
                return Ok(Attempt::Retry {
                    wait: None,
                    reason: e.to_string(),
                })
            }
        };
        if !status.is_success() {
            return Err(FetchError::Status {
                status: status.as_u16(),
                excerpt: excerpt(&body),
            });
        }
        parse_page(&body).map(Attempt::Done)
    }

    /// Fetches one page. Rate-limit responses wait for `Retry-After`; server
    /// errors and connection failures back off exponentially; both draw on the
    /// same retry budget. Malformed bodies and other 4xx are not retried.
    pub async fn fetch_page(&self, cursor: &PageCursor) -> Result<Page, FetchError> {
        let mut retries = 0u32;
        loop {
            match self.attempt(cursor).await? {
                Attempt::Done(page) => return Ok(page),
                Attempt::Retry { wait, reason } => {
                    if retries >= self.config.retry_budget {
                        return Err(FetchError::RetriesExhausted {
                            attempts: retries + 1,
                            last: reason,
                        });
                    }
                    let wait = wait
                        .map(|w| w.min(Duration::from_millis(self.config.max_backoff_ms)))
                        .unwrap_or_else(|| self.config.backoff(retries));
                    tracing::warn!(%reason, ?wait, retry = retries + 1, "retrying page fetch");
                    tokio::time::sleep(wait).await;
                    retries += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pages() {
        let p = parse_page(r#"{"studies":[{"a":1}],"nextPageToken":"abc"}"#).unwrap();
        assert_eq!(p.studies.len(), 1);
        assert_eq!(p.next_page_token.as_deref(), Some("abc"));
        let p = parse_page(r#"{"studies":[],"totalCount":0}"#).unwrap();
        assert_eq!(p.next_page_token, None);
    }

    #[test]
    fn malformed_body_keeps_an_excerpt() {
        let body = format!("<html>{}</html>", "x".repeat(500));
        match parse_page(&body) {
            Err(FetchError::Malformed { excerpt, .. }) => {
                assert!(excerpt.starts_with("<html>"));
                assert_eq!(excerpt.chars().count(), EXCERPT_CHARS);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_page(r#"{"nextPageToken":"x"}"#), Err(FetchError::Malformed { .. })));
    }
}
