//! Corpus persistence: the CSV interchange format, the stratified split and
//! the annotation store.
//!
//! The store keeps the corpus in memory behind a read/write lock. When opened
//! from a file, committed annotations are appended to a journal next to the
//! corpus (`<corpus>.annotations.jsonl`) and synced before the commit is
//! acknowledged; `compact` folds the journal back into the CSV.

mod csv_io;
mod split;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;
use crate::record::{CorpusRecord, NctId};

pub use csv_io::{append_corpus_rows, read_corpus, read_corpus_from, write_corpus, write_corpus_to, CSV_HEADER};
pub use split::{DatasetSplit, Ratios, SplitError, DEFAULT_SPLIT_SEED};

/// Annotator recorded for labels that arrive through CSV import.
pub const IMPORT_ANNOTATOR: &str = "csv-import";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing or unexpected header (found {found:?})")]
    MissingHeader { found: String },
    #[error("line {line}: invalid label value {value:?}")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: invalid {field} value {value:?}")]
    BadField {
        line: u64,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: duplicate record {id}")]
    DuplicateNctId { line: u64, id: NctId },
    #[error("unknown record {0}")]
    UnknownNctId(NctId),
    #[error("record {} already annotated as {}", .0.nct_id, .0.manual_label)]
    AlreadyAnnotated(Box<Annotation>),
    #[error("journal entry for {0} disagrees with the label in the corpus file")]
    JournalConflict(NctId),
    #[error("journal: {0}")]
    Journal(#[from] serde_json::Error),
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A committed manual label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub nct_id: NctId,
    pub manual_label: Label,
    pub annotator: String,
    pub annotated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub yes_count: usize,
    pub no_count: usize,
    pub undecided_count: usize,
}

impl LabelDistribution {
    pub fn from_labels<I: IntoIterator<Item = Label>>(labels: I) -> Self {
        let mut d = LabelDistribution::default();
        for l in labels {
            d.add(l);
        }
        d
    }

    pub fn add(&mut self, label: Label) {
        match label {
            Label::Yes => self.yes_count += 1,
            Label::No => self.no_count += 1,
            Label::Undecided => self.undecided_count += 1,
        }
    }

    pub fn count(&self, label: Label) -> usize {
        match label {
            Label::Yes => self.yes_count,
            Label::No => self.no_count,
            Label::Undecided => self.undecided_count,
        }
    }

    pub fn total(&self) -> usize {
        self.yes_count + self.no_count + self.undecided_count
    }
}

#[derive(Debug, Default)]
struct Inner {
    records: BTreeMap<NctId, CorpusRecord>,
    annotations: BTreeMap<NctId, Annotation>,
}

#[derive(Debug)]
pub struct CorpusStore {
    inner: RwLock<Inner>,
    corpus_path: Option<PathBuf>,
    journal: Option<Mutex<File>>,
}

pub fn journal_path(corpus: &Path) -> PathBuf {
    let mut name = corpus.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".annotations.jsonl");
    corpus.with_file_name(name)
}

impl CorpusStore {
    /// A store with no backing file.
    pub fn in_memory(records: Vec<CorpusRecord>) -> Result<Self, StoreError> {
        let store = CorpusStore {
            inner: RwLock::new(Inner::default()),
            corpus_path: None,
            journal: None,
        };
        store.insert_records(records)?;
        Ok(store)
    }

    /// Opens a corpus file, replaying any annotation journal next to it.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let records = read_corpus(path)?;
        let store = CorpusStore::in_memory(records)?;
        let jpath = journal_path(path);
        if jpath.exists() {
            let file = File::open(&jpath).map_err(|e| StoreError::io(&jpath, e))?;
            let mut inner = store.inner.write();
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| StoreError::io(&jpath, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let a: Annotation = serde_json::from_str(&line)?;
                let rec = inner
                    .records
                    .get_mut(&a.nct_id)
                    .ok_or_else(|| StoreError::UnknownNctId(a.nct_id.clone()))?;
                match rec.manual_label {
                    Some(l) if l != a.manual_label => {
                        return Err(StoreError::JournalConflict(a.nct_id))
                    }
                    _ => rec.manual_label = Some(a.manual_label),
                }
                inner.annotations.insert(a.nct_id.clone(), a);
            }
        }
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&jpath)
            .map_err(|e| StoreError::io(&jpath, e))?;
        Ok(CorpusStore {
            corpus_path: Some(path.to_path_buf()),
            journal: Some(Mutex::new(journal)),
            ..store
        })
    }

    fn insert_records(&self, records: Vec<CorpusRecord>) -> Result<usize, StoreError> {
        let mut inner = self.inner.write();
        let n = records.len();
        for (i, r) in records.into_iter().enumerate() {
            if inner.records.contains_key(&r.nct_id) {
                return Err(StoreError::DuplicateNctId {
                    line: i as u64 + 2,
                    id: r.nct_id,
                });
            }
            if let Some(label) = r.manual_label {
                inner.annotations.insert(
                    r.nct_id.clone(),
                    Annotation {
                        nct_id: r.nct_id.clone(),
                        manual_label: label,
                        annotator: IMPORT_ANNOTATOR.into(),
                        annotated_at: DateTime::UNIX_EPOCH,
                    },
                );
            }
            inner.records.insert(r.nct_id.clone(), r);
        }
        Ok(n)
    }

    /// Adds every record of a corpus file; returns the number imported.
    pub fn import_csv(&self, path: &Path) -> Result<usize, StoreError> {
        let records = read_corpus(path)?;
        self.insert_records(records)
    }

    pub fn export_csv(&self, path: &Path) -> Result<usize, StoreError> {
        write_corpus(path, &self.records())
    }

    pub fn export_to<W: Write>(&self, writer: W) -> Result<usize, StoreError> {
        let records = self.records();
        write_corpus_to(writer, &records)?;
        Ok(records.len())
    }

    /// Rewrites the backing corpus file with all committed labels and empties
    /// the journal.
    pub fn compact(&self) -> Result<(), StoreError> {
        let (Some(path), Some(journal)) = (&self.corpus_path, &self.journal) else {
            return Ok(());
        };
        // lock order matches record_annotation: records, then journal
        let inner = self.inner.read();
        let journal = journal.lock();
        let records: Vec<CorpusRecord> = inner.records.values().cloned().collect();
        write_corpus(path, &records)?;
        journal
            .set_len(0)
            .and_then(|_| journal.sync_all())
            .map_err(|e| StoreError::io(&journal_path(path), e))?;
        Ok(())
    }

    pub fn record_annotation(
        &self,
        nct_id: &NctId,
        manual_label: Label,
        annotator: &str,
    ) -> Result<Annotation, StoreError> {
        self.record_annotation_at(nct_id, manual_label, annotator, Utc::now())
    }

    /// Atomic check-and-insert: the first commit for a record wins.
    pub fn record_annotation_at(
        &self,
        nct_id: &NctId,
        manual_label: Label,
        annotator: &str,
        at: DateTime<Utc>,
    ) -> Result<Annotation, StoreError> {
        let mut inner = self.inner.write();
        let Some(record) = inner.records.get(nct_id) else {
            return Err(StoreError::UnknownNctId(nct_id.clone()));
        };
        if record.manual_label.is_some() {
            let existing = inner.annotations.get(nct_id).cloned().unwrap_or(Annotation {
                nct_id: nct_id.clone(),
                manual_label: record.manual_label.unwrap(),
                annotator: IMPORT_ANNOTATOR.into(),
                annotated_at: DateTime::UNIX_EPOCH,
            });
            return Err(StoreError::AlreadyAnnotated(Box::new(existing)));
        }
        let annotation = Annotation {
            nct_id: nct_id.clone(),
            manual_label,
            annotator: annotator.to_string(),
            annotated_at: at,
        };
        if let Some(journal) = &self.journal {
            let mut line = serde_json::to_string(&annotation)?;
            line.push('\n');
            let mut file = journal.lock();
            let path = self.corpus_path.as_deref().map(journal_path).unwrap_or_default();
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| StoreError::io(&path, e))?;
        }
        if let Some(r) = inner.records.get_mut(nct_id) {
            r.manual_label = Some(manual_label);
        }
        inner.annotations.insert(nct_id.clone(), annotation.clone());
        Ok(annotation)
    }

    pub fn annotation(&self, nct_id: &NctId) -> Option<Annotation> {
        self.inner.read().annotations.get(nct_id).cloned()
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.inner.read().annotations.values().cloned().collect()
    }

    pub fn label_distribution(&self) -> LabelDistribution {
        LabelDistribution::from_labels(
            self.inner
                .read()
                .records
                .values()
                .filter_map(|r| r.manual_label),
        )
    }

    pub fn get(&self, nct_id: &NctId) -> Option<CorpusRecord> {
        self.inner.read().records.get(nct_id).cloned()
    }

    pub fn contains(&self, nct_id: &NctId) -> bool {
        self.inner.read().records.contains_key(nct_id)
    }

    /// Snapshot of all records in identifier order.
    pub fn records(&self) -> Vec<CorpusRecord> {
        self.inner.read().records.values().cloned().collect()
    }

    /// Runs `f` over the records under the read lock.
    pub fn with_records<T>(&self, f: impl FnOnce(&mut dyn Iterator<Item = &CorpusRecord>) -> T) -> T {
        let inner = self.inner.read();
        let mut iter = inner.records.values();
        f(&mut iter)
    }

    pub fn len(&self) -> usize {
        self.inner.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply_split(&self, split: &DatasetSplit) {
        let mut inner = self.inner.write();
        for r in inner.records.values_mut() {
            r.split = split.segment_of(&r.nct_id);
        }
    }
}
