//! Resumable harvest of data-sharing statements into a corpus CSV.
//!
//! Pages are fetched ahead of the writer through a bounded channel; each page
//! is committed in order by appending its rows, syncing the file and then
//! atomically replacing the cursor file. The cursor records the committed
//! file length, so a resumed run first truncates anything written after the
//! last commit and then continues from the stored page token.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dss_core::corpus_store::{append_corpus_rows, read_corpus, StoreError, CSV_HEADER};
use dss_core::{CorpusRecord, NctId};

use crate::client::{CtgovClient, FetchError, Page, PageCursor};
use crate::extract::extract_dss;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestSummary {
    /// Study documents examined.
    pub fetched: usize,
    /// Records written to the output.
    pub kept: usize,
    /// Documents without a usable statement, malformed, or repeated.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct HarvestOptions {
    pub out: PathBuf,
    /// Stop after this many kept records; `Some(0)` performs no writes.
    pub max_records: Option<usize>,
    /// Continue from the cursor file next to `out` when one exists.
    pub resume: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum HarvestError {
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cursor file {path} is unreadable: {reason}")]
    BadCursor { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarvestError + '_ {
    move |source| HarvestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Checkpoint persisted after every committed page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestState {
    /// Page to fetch next.
    pub cursor: PageCursor,
    /// Length of the output file at the last commit.
    pub committed_bytes: u64,
    pub summary: HarvestSummary,
}

/// `<out>.cursor`
pub fn cursor_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".cursor");
    out.with_file_name(name)
}

impl HarvestState {
    pub fn load(path: &Path) -> Result<Option<Self>, HarvestError> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| HarvestError::BadCursor {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(path)(e)),
        }
    }

    fn save(&self, path: &Path) -> Result<(), HarvestError> {
        let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        let json = serde_json::to_vec(self).expect("state serializes");
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&json).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }
}

fn start_fresh(out: &Path, page_size: usize) -> Result<HarvestState, HarvestError> {
    let mut f = File::create(out).map_err(io_err(out))?;
    let mut header = CSV_HEADER.join(",");
    header.push('\n');
    f.write_all(header.as_bytes()).map_err(io_err(out))?;
    f.sync_all().map_err(io_err(out))?;
    Ok(HarvestState {
        cursor: PageCursor::first(page_size),
        committed_bytes: header.len() as u64,
        summary: HarvestSummary::default(),
    })
}

fn truncate_to_commit(out: &Path, state: &HarvestState) -> Result<HashSet<NctId>, HarvestError> {
    let f = OpenOptions::new().write(true).open(out).map_err(io_err(out))?;
    f.set_len(state.committed_bytes).map_err(io_err(out))?;
    f.sync_all().map_err(io_err(out))?;
    Ok(read_corpus(out)?.into_iter().map(|r| r.nct_id).collect())
}

fn append_rows(out: &Path, rows: &[CorpusRecord]) -> Result<u64, HarvestError> {
    let f = OpenOptions::new().append(true).open(out).map_err(io_err(out))?;
    let mut w = BufWriter::new(f);
    append_corpus_rows(&mut w, rows)?;
    let f = w.into_inner().map_err(|e| io_err(out)(e.into_error()))?;
    f.sync_data().map_err(io_err(out))?;
    Ok(f.metadata().map_err(io_err(out))?.len())
}

/// Outcome of folding one page into the running summary.
struct PageResult {
    rows: Vec<CorpusRecord>,
    summary: HarvestSummary,
    /// The record limit was reached before the page was exhausted.
    truncated: bool,
}

fn process_page(
    page: &Page,
    client: &CtgovClient,
    seen: &mut HashSet<NctId>,
    mut summary: HarvestSummary,
    max_records: Option<usize>,
) -> PageResult {
    let mut rows = Vec::new();
    for doc in &page.studies {
        if max_records.is_some_and(|m| summary.kept >= m) {
            return PageResult {
                rows,
                summary,
                truncated: true,
            };
        }
        summary.fetched += 1;
        match extract_dss(doc, &client.config().fields) {
            Ok(Some(record)) if seen.insert(record.nct_id.clone()) => {
                rows.push(CorpusRecord::from(record));
                summary.kept += 1;
            }
            Ok(Some(record)) => {
                tracing::debug!(nct_id = %record.nct_id, "repeated study skipped");
                summary.skipped += 1;
            }
            Ok(None) => summary.skipped += 1,
            Err(e) => {
                tracing::warn!(error = %e, "malformed study document skipped");
                summary.skipped += 1;
            }
        }
    }
    PageResult {
        rows,
        summary,
        truncated: false,
    }
}

/// Harvests every study carrying a data-sharing statement into `options.out`.
/// The cursor file is removed once the last page is committed.
pub async fn harvest(client: &CtgovClient, options: &HarvestOptions) -> Result<HarvestSummary, HarvestError> {
    if options.max_records == Some(0) {
        return Ok(HarvestSummary::default());
    }
    let out = options.out.as_path();
    let cursor_file = cursor_path(out);
    let page_size = client.config().page_size;
    let (mut state, mut seen) = match (options.resume, HarvestState::load(&cursor_file)?) {
        (true, Some(state)) if out.exists() => {
            tracing::info!(fetched = state.summary.fetched, "resuming harvest");
            let seen = truncate_to_commit(out, &state)?;
            (state, seen)
        }
        _ => {
            let state = start_fresh(out, page_size)?;
            state.save(&cursor_file)?;
            (state, HashSet::new())
        }
    };

    let (tx, mut rx) = tokio::sync::mpsc::channel::<Result<Page, FetchError>>(client.config().concurrency);
    let start = state.cursor.clone();
    let producer = async move {
        let mut cursor = start;
        loop {
            let result = client.fetch_page(&cursor).await;
            let next = match &result {
                Ok(page) => page.next_page_token.clone(),
                Err(_) => None,
            };
            if tx.send(result).await.is_err() {
                return;
            }
            match next {
                Some(token) => cursor.token = Some(token),
                None => return,
            }
        }
    };
    let consumer = async move {
        while let Some(result) = rx.recv().await {
            let page = result?;
            let processed = process_page(&page, client, &mut seen, state.summary, options.max_records);
            let len = append_rows(out, &processed.rows)?;
            if processed.truncated {
                // Leave the cursor on this page; a resume re-reads it whole.
                return Ok(processed.summary);
            }
            state.summary = processed.summary;
            state.committed_bytes = len;
            match page.next_page_token {
                Some(token) => {
                    state.cursor.token = Some(token);
                    state.save(&cursor_file)?;
                    if options.max_records.is_some_and(|m| state.summary.kept >= m) {
                        return Ok(state.summary);
                    }
                }
                None => {
                    match std::fs::remove_file(&cursor_file) {
                        Ok(()) => {}
                        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                        Err(e) => return Err(io_err(&cursor_file)(e)),
                    }
                    return Ok(state.summary);
                }
            }
        }
        Ok(state.summary)
    };
    // The consumer decides when the harvest ends; an unfinished prefetch is
    // simply dropped.
    tokio::pin!(producer, consumer);
    let mut producer_done = false;
    loop {
        tokio::select! {
            result = &mut consumer => return result,
            () = &mut producer, if !producer_done => producer_done = true,
        }
    }
}
