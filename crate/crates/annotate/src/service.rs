//! Task assignment, leases and label commits, independent of HTTP.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use dss_core::corpus_store::{Annotation, CorpusStore, LabelDistribution, StoreError};
use dss_core::eval_report::{discrepancies, AgreementReport, Discrepancy};
use dss_core::{Label, NctId};

/// Source of the current time; injectable so lease expiry can be tested.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

pub const DEFAULT_LEASE_MINUTES: i64 = 10;

/// What an annotator sees: the statement only, never the registry category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub nct_id: NctId,
    pub dss_text: String,
    pub lease_token: String,
    pub lease_expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
struct Lease {
    token: String,
    annotator: String,
    expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub label: String,
    pub annotator: String,
    pub lease_token: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubmitOutcome {
    Created(Annotation),
    /// The same submission was already committed.
    Repeated(Annotation),
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("invalid label {0:?}; expected Yes, No or Undecided")]
    InvalidLabel(String),
    #[error("annotator must not be empty")]
    MissingAnnotator,
    #[error("record {} is already labeled {}", .0.nct_id, .0.manual_label)]
    AlreadyLabeled(Box<Annotation>),
    #[error("lease for {0} is missing, expired or held by someone else")]
    LeaseGone(NctId),
    #[error(transparent)]
    Store(StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressStats {
    pub total: usize,
    pub labeled: usize,
    pub remaining: usize,
    pub distribution: LabelDistribution,
    /// Registry category versus manual label over the labeled records.
    pub agreement_so_far: AgreementReport,
}

pub struct AnnotationService {
    store: Arc<CorpusStore>,
    clock: Arc<dyn Clock>,
    lease_duration: Duration,
    leases: Mutex<HashMap<NctId, Lease>>,
    /// Lease tokens that produced a commit, for idempotent resubmission.
    consumed: Mutex<HashMap<NctId, String>>,
}

impl AnnotationService {
    pub fn new(store: Arc<CorpusStore>, clock: Arc<dyn Clock>, lease_duration: Duration) -> Self {
        AnnotationService {
            store,
            clock,
            lease_duration,
            leases: Mutex::new(HashMap::new()),
            consumed: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_defaults(store: Arc<CorpusStore>) -> Self {
        Self::new(store, Arc::new(SystemClock), Duration::minutes(DEFAULT_LEASE_MINUTES))
    }

    pub fn store(&self) -> &CorpusStore {
        &self.store
    }

    /// Leases the next unlabeled record to `annotator`. An annotator who
    /// already holds a live lease gets that task back. `None` when every
    /// remaining record is labeled or leased to someone else.
    pub fn next_task(&self, annotator: &str) -> Option<Task> {
        let now = self.clock.now();
        let mut leases = self.leases.lock();
        leases.retain(|_, l| l.expires_at > now);
        if let Some((id, lease)) = leases.iter().find(|(_, l)| l.annotator == annotator) {
            if let Some(r) = self.store.get(id) {
                if r.manual_label.is_none() {
                    return Some(Task {
                        nct_id: id.clone(),
                        dss_text: r.dss_text,
                        lease_token: lease.token.clone(),
                        lease_expires_at: lease.expires_at,
                    });
                }
            }
        }
        let record = self.store.with_records(|records| {
            for r in records {
                if r.manual_label.is_none() && !leases.contains_key(&r.nct_id) {
                    return Some(r.clone());
                }
            }
            None
        })?;
        let lease = Lease {
            token: uuid::Uuid::new_v4().to_string(),
            annotator: annotator.to_string(),
            expires_at: now + self.lease_duration,
        };
        let task = Task {
            nct_id: record.nct_id.clone(),
            dss_text: record.dss_text,
            lease_token: lease.token.clone(),
            lease_expires_at: lease.expires_at,
        };
        leases.insert(record.nct_id, lease);
        Some(task)
    }

    /// Commits a label. Checks run in this order: unknown record, invalid
    /// label, already labeled (a byte-identical resubmission of the
    /// committed label is accepted as a repeat), then the lease.
    pub fn submit(&self, nct_id: &str, submission: &LabelSubmission) -> Result<SubmitOutcome, SubmitError> {
        let id = NctId::new(nct_id)
            .ok()
            .filter(|id| self.store.contains(id))
            .ok_or_else(|| SubmitError::UnknownRecord(nct_id.to_string()))?;
        let label: Label = submission
            .label
            .parse()
            .map_err(|_| SubmitError::InvalidLabel(submission.label.clone()))?;
        if submission.annotator.trim().is_empty() {
            return Err(SubmitError::MissingAnnotator);
        }
        let mut leases = self.leases.lock();
        if let Some(existing) = self.store.annotation(&id) {
            return self.repeated_or_conflict(&id, existing, label, submission);
        }
        let now = self.clock.now();
        match leases.get(&id) {
            Some(l) if l.token == submission.lease_token && l.annotator == submission.annotator && l.expires_at > now => {}
            _ => return Err(SubmitError::LeaseGone(id)),
        }
        let annotation = match self.store.record_annotation_at(&id, label, &submission.annotator, now) {
            Ok(a) => a,
            Err(StoreError::AlreadyAnnotated(existing)) => {
                return self.repeated_or_conflict(&id, *existing, label, submission)
            }
            Err(e) => return Err(SubmitError::Store(e)),
        };
        leases.remove(&id);
        self.consumed.lock().insert(id, submission.lease_token.clone());
        Ok(SubmitOutcome::Created(annotation))
    }

    fn repeated_or_conflict(
        &self,
        id: &NctId,
        existing: Annotation,
        label: Label,
        submission: &LabelSubmission,
    ) -> Result<SubmitOutcome, SubmitError> {
        let same_token = self.consumed.lock().get(id) == Some(&submission.lease_token);
        if same_token && existing.manual_label == label && existing.annotator == submission.annotator {
            Ok(SubmitOutcome::Repeated(existing))
        } else {
            Err(SubmitError::AlreadyLabeled(Box::new(existing)))
        }
    }

    pub fn stats(&self) -> ProgressStats {
        self.store.with_records(|records| {
            let mut total = 0;
            let mut labels = Vec::new();
            let mut pairs = Vec::new();
            for r in records {
                total += 1;
                if let Some(m) = r.manual_label {
                    labels.push(m);
                    pairs.push((r.original_category, m));
                }
            }
            ProgressStats {
                total,
                labeled: labels.len(),
                remaining: total - labels.len(),
                distribution: LabelDistribution::from_labels(labels),
                agreement_so_far: AgreementReport::from_pairs(pairs),
            }
        })
    }

    /// Labeled records whose registry category differs from the manual label.
    pub fn discrepancies(&self) -> Vec<Discrepancy> {
        let labeled: Vec<_> = self
            .store
            .records()
            .into_iter()
            .filter(|r| r.manual_label.is_some())
            .collect();
        discrepancies(&labeled).expect("only labeled records")
    }

    pub fn export_csv(&self) -> Result<Vec<u8>, StoreError> {
        let mut out = Vec::new();
        self.store.export_to(&mut out)?;
        Ok(out)
    }
}
