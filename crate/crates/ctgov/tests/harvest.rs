use std::path::Path;

use dss_core::corpus_store::read_corpus;
use dss_ctgov::mock::{mock_documents, Faults, MockRegistry};
use dss_ctgov::{cursor_path, harvest, CtgovClient, CtgovConfig, FetchError, HarvestError, HarvestOptions, HarvestSummary};

fn fast_config(base_url: &str, page_size: usize) -> CtgovConfig {
    CtgovConfig {
        base_url: base_url.to_string(),
        page_size,
        requests_per_second: 1000.0,
        retry_budget: 3,
        initial_backoff_ms: 1,
        max_backoff_ms: 5,
        request_timeout_secs: 10,
        concurrency: 2,
        ..Default::default()
    }
}

fn options(out: &Path, resume: bool, max_records: Option<usize>) -> HarvestOptions {
    HarvestOptions {
        out: out.to_path_buf(),
        max_records,
        resume,
    }
}

const FULL: HarvestSummary = HarvestSummary {
    fetched: 1000,
    kept: 870,
    skipped: 130,
};

#[tokio::test]
async fn full_harvest_reports_fetched_kept_skipped() {
    let registry = MockRegistry::start(mock_documents(1000, 130)).await.unwrap();
    let client = CtgovClient::new(fast_config(&registry.base_url, 100)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("raw.csv");
    let summary = harvest(&client, &options(&out, false, None)).await.unwrap();
    assert_eq!(summary, FULL);
    let records = read_corpus(&out).unwrap();
    assert_eq!(records.len(), 870);
    assert!(records.windows(2).all(|w| w[0].nct_id < w[1].nct_id));
    assert!(records.iter().all(|r| r.manual_label.is_none() && r.split.is_none()));
    assert!(!cursor_path(&out).exists(), "cursor removed on completion");
    assert_eq!(registry.requests(), 10);
}

#[tokio::test]
async fn interrupted_harvest_resumes_to_identical_records() {
    let registry = MockRegistry::start(mock_documents(1000, 130)).await.unwrap();
    let client = CtgovClient::new(fast_config(&registry.base_url, 100)).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let reference = dir.path().join("reference.csv");
    harvest(&client, &options(&reference, false, None)).await.unwrap();

    let out = dir.path().join("raw.csv");
    registry.set_faults(Faults {
        fail_from_offset: Some(400),
        ..Default::default()
    });
    let err = harvest(&client, &options(&out, false, None)).await.unwrap_err();
    assert!(matches!(err, HarvestError::Fetch(FetchError::RetriesExhausted { .. })), "{err}");
    assert!(cursor_path(&out).exists());
    let partial = read_corpus(&out).unwrap();
    assert!(!partial.is_empty() && partial.len() < 870);

    // A crash mid-append leaves a torn row after the last commit.
    {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new().append(true).open(&out).unwrap();
        f.write_all(b"NCT10002800,Yes,\"torn row").unwrap();
    }

    registry.set_faults(Faults::default());
    let summary = harvest(&client, &options(&out, true, None)).await.unwrap();
    assert_eq!(summary, FULL);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&reference).unwrap());
}

#[tokio::test]
async fn resume_from_an_older_cursor_does_not_duplicate() {
    let registry = MockRegistry::start(mock_documents(300, 30)).await.unwrap();
    let client = CtgovClient::new(fast_config(&registry.base_url, 50)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("reference.csv");
    let expected = harvest(&client, &options(&reference, false, None)).await.unwrap();

    let out = dir.path().join("raw.csv");
    registry.set_faults(Faults {
        fail_from_offset: Some(100),
        ..Default::default()
    });
    harvest(&client, &options(&out, false, None)).await.unwrap_err();
    let early_cursor = std::fs::read(cursor_path(&out)).unwrap();
    registry.set_faults(Faults {
        fail_from_offset: Some(250),
        ..Default::default()
    });
    harvest(&client, &options(&out, true, None)).await.unwrap_err();
    // Roll the cursor back, as if the later commits never happened.
    std::fs::write(cursor_path(&out), early_cursor).unwrap();
    registry.set_faults(Faults::default());
    let summary = harvest(&client, &options(&out, true, None)).await.unwrap();
    assert_eq!(summary, expected);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&reference).unwrap());
}

#[tokio::test]
async fn record_limit() {
    let registry = MockRegistry::start(mock_documents(200, 20)).await.unwrap();
    let client = CtgovClient::new(fast_config(&registry.base_url, 40)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("raw.csv");

    let summary = harvest(&client, &options(&out, false, Some(0))).await.unwrap();
    assert_eq!(summary, HarvestSummary::default());
    assert!(!out.exists());
    assert_eq!(registry.requests(), 0);

    let summary = harvest(&client, &options(&out, false, Some(25))).await.unwrap();
    assert_eq!(summary.kept, 25);
    assert_eq!(summary.fetched, summary.kept + summary.skipped);
    assert_eq!(read_corpus(&out).unwrap().len(), 25);

    let summary = harvest(&client, &options(&out, true, None)).await.unwrap();
    assert_eq!(
        summary,
        HarvestSummary {
            fetched: 200,
            kept: 180,
            skipped: 20
        }
    );
    assert_eq!(read_corpus(&out).unwrap().len(), 180);
}

#[tokio::test]
async fn fresh_run_overwrites_previous_output() {
    let registry = MockRegistry::start(mock_documents(30, 3)).await.unwrap();
    let client = CtgovClient::new(fast_config(&registry.base_url, 10)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("raw.csv");
    harvest(&client, &options(&out, false, None)).await.unwrap();
    let summary = harvest(&client, &options(&out, false, None)).await.unwrap();
    assert_eq!(summary.kept, 27);
    assert_eq!(read_corpus(&out).unwrap().len(), 27);
}

#[tokio::test]
async fn transient_failures_are_retried() {
    let registry = MockRegistry::start(mock_documents(20, 0)).await.unwrap();
    let client = CtgovClient::new(fast_config(&registry.base_url, 10)).unwrap();
    registry.set_faults(Faults {
        rate_limited: 2,
        retry_after_secs: 0,
        server_errors: 1,
        ..Default::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("raw.csv");
    let summary = harvest(&client, &options(&out, false, None)).await.unwrap();
    assert_eq!(summary.kept, 20);
    assert_eq!(registry.requests(), 2 + 3);
}

#[tokio::test]
async fn retry_budget_is_bounded() {
    let registry = MockRegistry::start(mock_documents(5, 0)).await.unwrap();
    let client = CtgovClient::new(fast_config(&registry.base_url, 10)).unwrap();
    registry.set_faults(Faults {
        server_errors: 100,
        ..Default::default()
    });
    let err = client.fetch_page(&dss_ctgov::PageCursor::first(10)).await.unwrap_err();
    match err {
        FetchError::RetriesExhausted { attempts, .. } => assert_eq!(attempts, 4),
        other => panic!("unexpected {other}"),
    }
    assert_eq!(registry.requests(), 4);
}

#[tokio::test]
async fn malformed_response_is_not_retried() {
    let registry = MockRegistry::start(mock_documents(5, 0)).await.unwrap();
    let client = CtgovClient::new(fast_config(&registry.base_url, 10)).unwrap();
    registry.set_faults(Faults {
        malformed_at_offset: Some(0),
        ..Default::default()
    });
    let err = client.fetch_page(&dss_ctgov::PageCursor::first(10)).await.unwrap_err();
    match &err {
        FetchError::Malformed { excerpt, .. } => assert!(excerpt.contains("maintenance")),
        other => panic!("unexpected {other}"),
    }
    assert!(!err.is_retryable());
    assert_eq!(registry.requests(), 1);
}

#[tokio::test]
async fn client_errors_surface_with_status() {
    let registry = MockRegistry::start(mock_documents(5, 0)).await.unwrap();
    let client = CtgovClient::new(fast_config(&registry.base_url, 10)).unwrap();
    let cursor = dss_ctgov::PageCursor {
        token: Some("bogus".into()),
        page_size: 10,
    };
    match client.fetch_page(&cursor).await.unwrap_err() {
        FetchError::Status { status, .. } => assert_eq!(status, 400),
        other => panic!("unexpected {other}"),
    }
}

#[tokio::test]
async fn requests_respect_the_rate_limit() {
    let registry = MockRegistry::start(mock_documents(50, 0)).await.unwrap();
    let mut config = fast_config(&registry.base_url, 10);
    config.requests_per_second = 20.0;
    let client = CtgovClient::new(config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let started = std::time::Instant::now();
    harvest(&client, &options(&dir.path().join("raw.csv"), false, None)).await.unwrap();
    // five requests need at least four full intervals of 50 ms
    assert!(started.elapsed() >= std::time::Duration::from_millis(200));
}
