use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration};
use reqwest::StatusCode;
use serde_json::{json, Value};

use dss_annotate::{AnnotationService, Clock, ManualClock, SystemClock};
use dss_core::corpus_store::{read_corpus, write_corpus, CorpusStore};
use dss_core::{CorpusRecord, Label, NctId};

fn records(n: usize) -> Vec<CorpusRecord> {
    (0..n)
        .map(|i| CorpusRecord {
            nct_id: NctId::new(format!("NCT{:08}", 100 + i)).unwrap(),
            original_category: Label::ALL[i % 3],
            dss_text: format!("Statement {i}: IPD may be shared, \"quoted\", on request."),
            first_posted_year: 2019,
            manual_label: None,
            split: None,
        })
        .collect()
}

struct Server {
    base: String,
    client: reqwest::Client,
}

impl Server {
    async fn start(store: Arc<CorpusStore>, clock: Arc<dyn Clock>, ui_dir: Option<&Path>) -> Self {
        let svc = Arc::new(AnnotationService::new(store, clock, Duration::minutes(10)));
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let ui = ui_dir.map(Path::to_path_buf);
        tokio::spawn(dss_annotate::serve(listener, svc, ui, std::future::pending()));
        Server {
            base,
            client: reqwest::Client::new(),
        }
    }

    async fn next(&self, annotator: &str) -> (StatusCode, Value) {
        let resp = self
            .client
            .get(format!("{}/api/tasks/next", self.base))
            .query(&[("annotator", annotator)])
            .send()
            .await
            .unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    async fn label(&self, id: &str, body: Value) -> (StatusCode, Value) {
        let resp = self
            .client
            .post(format!("{}/api/tasks/{id}/label", self.base))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .await
            .unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    async fn get_json(&self, path: &str) -> Value {
        let text = self.client.get(format!("{}{path}", self.base)).send().await.unwrap().text().await.unwrap();
        serde_json::from_str(&text).unwrap()
    }
}

fn body(label: &str, annotator: &str, task: &Value) -> Value {
    json!({ "label": label, "annotator": annotator, "lease_token": task["lease_token"] })
}

#[tokio::test]
async fn tasks_are_blind_and_statuses_follow_the_contract() {
    let store = Arc::new(CorpusStore::in_memory(records(2)).unwrap());
    let s = Server::start(store, Arc::new(SystemClock), None).await;

    let (status, task) = s.next("ann").await;
    assert_eq!(status, StatusCode::OK);
    let keys: HashSet<&str> = task.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, HashSet::from(["nct_id", "dss_text", "lease_token", "lease_expires_at"]));
    let id = task["nct_id"].as_str().unwrap().to_string();

    assert_eq!(s.next("").await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(s.label("NCT99999999", body("Yes", "ann", &task)).await.0, StatusCode::NOT_FOUND);
    assert_eq!(s.label(&id, body("maybe", "ann", &task)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(s.label(&id, json!({"label": "Yes"})).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let stale = json!({ "label": "Yes", "annotator": "ann", "lease_token": "stale" });
    assert_eq!(s.label(&id, stale.clone()).await.0, StatusCode::GONE);

    let (status, created) = s.label(&id, body("No", "ann", &task)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["manual_label"], "No");
    assert_eq!(created["annotator"], "ann");
    assert_eq!(s.label(&id, body("No", "ann", &task)).await.0, StatusCode::OK);
    let (status, conflict) = s.label(&id, body("Yes", "ann", &task)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(conflict["existing"]["manual_label"], "No");
    assert_eq!(s.label(&id, stale).await.0, StatusCode::CONFLICT);

    let (_, second) = s.next("ann").await;
    assert_ne!(second["nct_id"], task["nct_id"]);
    assert_eq!(s.next("bob").await.0, StatusCode::NO_CONTENT);

    let stats = s.get_json("/api/stats").await;
    assert_eq!(stats["total"], 2);
    assert_eq!(stats["labeled"], 1);
    assert_eq!(stats["remaining"], 1);
    assert_eq!(stats["distribution"]["no_count"], 1);
    assert_eq!(stats["agreement_so_far"]["total"], 1);
}

#[tokio::test]
async fn expired_leases_are_reassigned() {
    let clock = Arc::new(ManualClock::new(DateTime::UNIX_EPOCH + Duration::days(19_000)));
    let store = Arc::new(CorpusStore::in_memory(records(1)).unwrap());
    let s = Server::start(store, clock.clone(), None).await;
    let (_, first) = s.next("ann").await;
    assert_eq!(s.next("bob").await.0, StatusCode::NO_CONTENT);
    clock.advance(Duration::minutes(10));
    let (status, second) = s.next("bob").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(second["nct_id"], first["nct_id"]);
    let id = first["nct_id"].as_str().unwrap();
    assert_eq!(s.label(id, body("Yes", "ann", &first)).await.0, StatusCode::GONE);
    assert_eq!(s.label(id, body("Yes", "bob", &second)).await.0, StatusCode::CREATED);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_annotators_label_each_record_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.csv");
    write_corpus(&path, &records(60)).unwrap();
    let store = Arc::new(CorpusStore::open(&path).unwrap());
    let s = Arc::new(Server::start(store.clone(), Arc::new(SystemClock), None).await);

    let mut handles = Vec::new();
    for a in 0..8 {
        let s = s.clone();
        handles.push(tokio::spawn(async move {
            let name = format!("annotator-{a}");
            let mut mine = Vec::new();
            loop {
                let (status, task) = s.next(&name).await;
                if status == StatusCode::NO_CONTENT {
                    return mine;
                }
                let id = task["nct_id"].as_str().unwrap().to_string();
                let (status, _) = s.label(&id, body(Label::ALL[a % 3].as_str(), &name, &task)).await;
                assert_eq!(status, StatusCode::CREATED);
                mine.push(id);
            }
        }));
    }
    let mut all = Vec::new();
    for h in handles {
        all.extend(h.await.unwrap());
    }
    assert_eq!(all.len(), 60);
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), 60);

    // every acknowledged label is durable before compaction
    let reopened = CorpusStore::open(&path).unwrap();
    assert_eq!(reopened.label_distribution().total(), 60);
    store.compact().unwrap();
    assert!(read_corpus(&path).unwrap().iter().all(|r| r.manual_label.is_some()));
}

#[tokio::test]
async fn export_and_static_ui() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<h1>labels</h1>").unwrap();
    let store = Arc::new(CorpusStore::in_memory(records(3)).unwrap());
    let s = Server::start(store, Arc::new(SystemClock), Some(ui.path())).await;
    let (_, task) = s.next("ann").await;
    s.label(task["nct_id"].as_str().unwrap(), body("Undecided", "ann", &task)).await;

    let resp = s.client.get(format!("{}/api/export", s.base)).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let csv = resp.text().await.unwrap();
    let back = dss_core::corpus_store::read_corpus_from(csv.as_bytes()).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back.iter().filter(|r| r.manual_label == Some(Label::Undecided)).count(), 1);

    let disc = s.get_json("/api/discrepancies").await;
    assert_eq!(disc.as_array().unwrap().len(), 1);

    let page = s.client.get(format!("{}/index.html", s.base)).send().await.unwrap();
    assert_eq!(page.text().await.unwrap(), "<h1>labels</h1>");
}
