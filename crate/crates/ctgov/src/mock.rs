//! In-process stand-in for the registry's `studies` endpoint, with fault
//! injection for exercising retries and interrupted harvests.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::{json, Value};

/// Faults applied to upcoming requests. Counters are consumed one per request.
#[derive(Debug, Clone, Default)]
pub struct Faults {
    /// Next requests answered with 429.
    pub rate_limited: usize,
    /// `Retry-After` seconds sent with each 429.
    pub retry_after_secs: u64,
    /// Next requests answered with 503.
    pub server_errors: usize,
    /// Every page starting at or beyond this document offset fails with 503.
    pub fail_from_offset: Option<usize>,
    /// The page starting at this offset gets a non-JSON body.
    pub malformed_at_offset: Option<usize>,
}

#[derive(Debug)]
pub struct MockState {
    docs: Vec<Value>,
    faults: Mutex<Faults>,
    requests: AtomicUsize,
}

#[derive(Debug, Clone)]
pub struct MockRegistry {
    /// Use as the client's `base_url`.
    pub base_url: String,
    pub addr: SocketAddr,
    state: Arc<MockState>,
}

impl MockRegistry {
    /// Serves `docs` on an ephemeral local port for the life of the runtime.
    pub async fn start(docs: Vec<Value>) -> std::io::Result<Self> {
        let state = Arc::new(MockState {
            docs,
            faults: Mutex::new(Faults::default()),
            requests: AtomicUsize::new(0),
        });
        let app = Router::new()
            .route("/api/v2/studies", get(studies))
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await?;
        let addr = listener.local_addr()?;
        tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Ok(MockRegistry {
            base_url: format!("http://{addr}/api/v2"),
            addr,
            state,
        })
    }

    pub fn set_faults(&self, faults: Faults) {
        *self.state.faults.lock().expect("faults lock") = faults;
    }

    pub fn requests(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }
}

fn page_token(offset: usize) -> String {
    format!("tok-{offset}")
}

async fn studies(State(state): State<Arc<MockState>>, Query(q): Query<HashMap<String, String>>) -> Response {
    state.requests.fetch_add(1, Ordering::SeqCst);
    let size: usize = match q.get("pageSize").map(|s| s.parse()) {
        None => 10,
        Some(Ok(n)) if (1..=1000).contains(&n) => n,
        _ => return (StatusCode::BAD_REQUEST, "bad pageSize").into_response(),
    };
    let offset = match q.get("pageToken") {
        None => 0,
        Some(t) => match t.strip_prefix("tok-").and_then(|n| n.parse::<usize>().ok()) {
            Some(n) if n <= state.docs.len() => n,
            _ => return (StatusCode::BAD_REQUEST, "unknown pageToken").into_response(),
        },
    };
    {
        let mut f = state.faults.lock().expect("faults lock");
        if f.rate_limited > 0 {
            f.rate_limited -= 1;
            return (
                StatusCode::TOO_MANY_REQUESTS,
                [(header::RETRY_AFTER, f.retry_after_secs.to_string())],
                "slow down",
            )
                .into_response();
        }
        if f.server_errors > 0 {
            f.server_errors -= 1;
            return (StatusCode::SERVICE_UNAVAILABLE, "try later").into_response();
        }
        if f.fail_from_offset.is_some_and(|o| offset >= o) {
            return (StatusCode::SERVICE_UNAVAILABLE, "down").into_response();
        }
        if f.malformed_at_offset == Some(offset) {
            return (StatusCode::OK, "<html>maintenance</html>").into_response();
        }
    }
    let end = (offset + size).min(state.docs.len());
    let mut body = json!({ "studies": state.docs[offset..end] });
    if end < state.docs.len() {
        body["nextPageToken"] = json!(page_token(end));
    }
    Json(body).into_response()
}

/// `n` study documents in the registry's v2 shape, of which exactly `missing`
/// (spread evenly) lack a usable data-sharing statement.
pub fn mock_documents(n: usize, missing: usize) -> Vec<Value> {
    assert!(missing <= n);
    const CATEGORIES: [&str; 3] = ["YES", "NO", "UNDECIDED"];
    const TEXTS: [&str; 3] = [
        "De-identified individual participant data will be shared with qualified researchers on request",
        "There is no plan to share individual participant data with other researchers",
        "It is undecided whether IPD will be made available; this depends on sponsor approval",
    ];
    (0..n)
        .map(|i| {
            let lacks = (i + 1) * missing / n > i * missing / n;
            let nct = format!("NCT{:08}", 10_000_000 + i * 7);
            let date = format!("{}-0{}-15", 2015 + i % 9, 1 + i % 9);
            let ipd = if !lacks {
                json!({
                    "ipdSharing": CATEGORIES[i % 3],
                    "description": format!("{} (study {i}).", TEXTS[i % 3]),
                })
            } else {
                match i % 3 {
                    0 => json!({ "ipdSharing": CATEGORIES[i % 3] }),
                    1 => json!({ "description": "Data will be shared." }),
                    _ => Value::Null,
                }
            };
            let mut protocol = json!({
                "identificationModule": { "nctId": nct, "briefTitle": format!("Study {i}") },
                "statusModule": { "studyFirstPostDateStruct": { "date": date, "type": "ACTUAL" } },
            });
            if !ipd.is_null() {
                protocol["ipdSharingStatementModule"] = ipd;
            }
            json!({ "protocolSection": protocol, "hasResults": false })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FieldMapping;
    use crate::extract::extract_dss;

    #[test]
    fn missing_count_is_exact() {
        for (n, m) in [(1000, 130), (10, 0), (10, 10), (7, 3)] {
            let docs = mock_documents(n, m);
            let f = FieldMapping::default();
            let kept = docs.iter().filter(|d| extract_dss(d, &f).unwrap().is_some()).count();
            assert_eq!(kept, n - m, "n={n} m={m}");
        }
    }
}
