//! Statement cleaning: character and phrase stripping, whitespace
//! normalization, the minimum-length filter and deduplication.
//!
//! Rules are applied in a fixed order (characters, phrases, whitespace) and
//! repeated until the text stops changing, so a removal can never leave
//! behind a freshly assembled banned sequence. The length filter and
//! deduplication operate on the final text.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;
use crate::record::{NctId, TrialRecord};

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("duplicate registry identifier {0} in harvested input")]
    DuplicateNctId(NctId),
    #[error("reading cleaning rules from {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing cleaning rules: {0}")]
    Parse(#[from] toml::de::Error),
}

fn default_sequences() -> Vec<String> {
    vec!["@@".into(), "*".into()]
}

fn default_phrases() -> Vec<String> {
    vec![
        "gsk and wrair".into(),
        "glaxosmithkline".into(),
        "n/a - phase i study".into(),
    ]
}

fn default_min_chars() -> usize {
    10
}

fn default_true() -> bool {
    true
}

/// Cleaning configuration. Loaded from the `[normalizer]` table of a TOML
/// file, or from a file holding these keys at top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningRules {
    /// Literal character sequences removed wherever they occur (case-sensitive).
    #[serde(default = "default_sequences")]
    pub removed_sequences: Vec<String>,
    /// Phrases removed case-insensitively.
    #[serde(default = "default_phrases")]
    pub banned_phrases: Vec<String>,
    /// Texts with fewer characters than this are dropped.
    #[serde(default = "default_min_chars")]
    pub min_chars: usize,
    /// Drop control characters; tab, CR and LF become spaces.
    #[serde(default = "default_true")]
    pub strip_control: bool,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            removed_sequences: default_sequences(),
            banned_phrases: default_phrases(),
            min_chars: default_min_chars(),
            strip_control: true,
        }
    }
}

impl CleaningRules {
    pub fn from_toml_str(s: &str) -> Result<Self, NormalizeError> {
        #[derive(Deserialize)]
        struct Wrapped {
            normalizer: CleaningRules,
        }
        let value: toml::Table = toml::from_str(s)?;
        if value.contains_key("normalizer") {
            Ok(toml::from_str::<Wrapped>(s)?.normalizer)
        } else {
            Ok(toml::from_str(s)?)
        }
    }

    pub fn load(path: &Path) -> Result<Self, NormalizeError> {
        let text = std::fs::read_to_string(path).map_err(|source| NormalizeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

/// A statement that survived cleaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanRecord {
    pub nct_id: NctId,
    pub original_category: Label,
    pub clean_text: String,
    pub first_posted_year: u16,
    /// Identifiers of the rules that changed the text, in first-application order.
    pub applied_rules: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub raw_count: usize,
    pub after_clean_count: usize,
    pub dropped_short: usize,
    pub dropped_duplicate: usize,
    pub dropped_empty: usize,
}

impl CorpusStats {
    pub fn is_conserved(&self) -> bool {
        self.raw_count
            == self.after_clean_count + self.dropped_short + self.dropped_duplicate + self.dropped_empty
    }
}

/// Result of cleaning a single text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cleaned {
    pub text: String,
    pub applied_rules: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Normalizer {
    rules: CleaningRules,
    phrases_lower: Vec<(String, Vec<char>)>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::new(CleaningRules::default())
    }
}

impl Normalizer {
    pub fn new(rules: CleaningRules) -> Self {
        let phrases_lower = rules
            .banned_phrases
            .iter()
            .filter(|p| !p.is_empty())
            .map(|p| (p.clone(), p.chars().flat_map(char::to_lowercase).collect()))
            .collect();
        Normalizer {
            rules,
            phrases_lower,
        }
    }

    pub fn rules(&self) -> &CleaningRules {
        &self.rules
    }

    /// Cleans `text`; `None` when the result is shorter than the minimum length.
    pub fn clean_text(&self, text: &str) -> Option<String> {
        self.clean_with_provenance(text).map(|c| c.text)
    }

    pub fn clean_with_provenance(&self, text: &str) -> Option<Cleaned> {
        let mut applied: Vec<String> = Vec::new();
        let mut note = |id: String| {
            if !applied.contains(&id) {
                applied.push(id);
            }
        };
        let mut current = text.to_string();
        loop {
            let before = current.clone();
            if self.rules.strip_control {
                let next = strip_control(&current);
                if next != current {
                    note("strip_control".into());
                    current = next;
                }
            }
            for seq in self.rules.removed_sequences.iter().filter(|s| !s.is_empty()) {
                if current.contains(seq.as_str()) {
                    current = current.replace(seq.as_str(), "");
                    note(format!("remove:{seq}"));
                }
            }
            for (phrase, lower) in &self.phrases_lower {
                if let Some(next) = remove_phrase_ci(&current, lower) {
                    current = next;
                    note(format!("phrase:{phrase}"));
                }
            }
            let collapsed = collapse_whitespace(&current);
            if collapsed != current {
                note("collapse_whitespace".into());
                current = collapsed;
            }
            if current == before {
                break;
            }
        }
        if current.chars().count() < self.rules.min_chars {
            return None;
        }
        Some(Cleaned {
            text: current,
            applied_rules: applied,
        })
    }

    /// Applies cleaning to every record and then deduplicates.
    pub fn build_corpus(
        &self,
        raw: Vec<TrialRecord>,
    ) -> Result<(Vec<CleanRecord>, CorpusStats), NormalizeError> {
        let mut seen = HashSet::with_capacity(raw.len());
        for r in &raw {
            if !seen.insert(r.nct_id.clone()) {
                return Err(NormalizeError::DuplicateNctId(r.nct_id.clone()));
            }
        }
        let mut stats = CorpusStats {
            raw_count: raw.len(),
            ..CorpusStats::default()
        };
        let mut cleaned = Vec::with_capacity(raw.len());
        for r in raw {
            if r.dss_text.trim().is_empty() {
                stats.dropped_empty += 1;
                continue;
            }
            match self.clean_with_provenance(&r.dss_text) {
                Some(c) => cleaned.push(CleanRecord {
                    nct_id: r.nct_id,
                    original_category: r.original_category,
                    clean_text: c.text,
                    first_posted_year: r.first_posted_year,
                    applied_rules: c.applied_rules,
                }),
                None => stats.dropped_short += 1,
            }
        }
        let before_dedupe = cleaned.len();
        let kept = dedupe(cleaned);
        stats.dropped_duplicate = before_dedupe - kept.len();
        stats.after_clean_count = kept.len();
        debug_assert!(stats.is_conserved());
        Ok((kept, stats))
    }
}

/// Keeps one record per distinct text (compared case-insensitively): the one
/// with the smallest identifier. Output is ordered by identifier.
pub fn dedupe(records: Vec<CleanRecord>) -> Vec<CleanRecord> {
    let mut by_text: BTreeMap<String, CleanRecord> = BTreeMap::new();
    for r in records {
        let key = r.clean_text.to_lowercase();
        match by_text.get(&key) {
            Some(existing) if existing.nct_id <= r.nct_id => {}
            _ => {
                by_text.insert(key, r);
            }
        }
    }
    let mut out: Vec<CleanRecord> = by_text.into_values().collect();
    out.sort_by(|a, b| a.nct_id.cmp(&b.nct_id));
    out
}

fn strip_control(text: &str) -> String {
    text.chars()
        .filter_map(|c| match c {
            '\n' | '\r' | '\t' => Some(' '),
            c if c.is_control() => None,
            c => Some(c),
        })
        .collect()
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes every non-overlapping case-insensitive occurrence of `phrase`
/// (given pre-lowercased). Returns `None` when nothing matched.
fn remove_phrase_ci(text: &str, phrase: &[char]) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut matched = false;
    let mut i = 0;
    while i < chars.len() {
        if let Some(len) = match_at(&chars[i..], phrase) {
            matched = true;
            i += len;
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    matched.then_some(out)
}

/// Number of text chars consumed if `phrase` matches at the start of `text`.
fn match_at(text: &[char], phrase: &[char]) -> Option<usize> {
    let mut p = 0;
    for (consumed, c) in text.iter().enumerate() {
        if p == phrase.len() {
            return Some(consumed);
        }
        for lc in c.to_lowercase() {
            if p >= phrase.len() || phrase[p] != lc {
                return None;
            }
            p += 1;
        }
    }
    (p == phrase.len()).then_some(text.len())
}
