//! Registry identifiers and the record types that flow through the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::label::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid registry identifier {0:?} (expected NCT followed by 8 digits)")]
pub struct InvalidNctId(pub String);

/// A ClinicalTrials.gov identifier: `NCT` followed by exactly eight digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NctId(String);

impl NctId {
    pub fn new(value: impl Into<String>) -> Result<Self, InvalidNctId> {
        let value = value.into();
        let valid = value.len() == 11
            && value.starts_with("NCT")
            && value[3..].bytes().all(|b| b.is_ascii_digit());
        if valid {
            Ok(NctId(value))
        } else {
            Err(InvalidNctId(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for NctId {
    type Err = InvalidNctId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NctId::new(s)
    }
}

impl fmt::Display for NctId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for NctId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for NctId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        NctId::new(s).map_err(serde::de::Error::custom)
    }
}

/// One registry entry as harvested, before cleaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub nct_id: NctId,
    pub original_category: Label,
    pub dss_text: String,
    /// Year of first posting; 0 when the registry did not provide one.
    pub first_posted_year: u16,
}

/// Dataset segment a record is assigned to by the split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Train,
    Validation,
    Test,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Train, Segment::Validation, Segment::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Train => "train",
            Segment::Validation => "validation",
            Segment::Test => "test",
        }
    }
}

impl FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Segment::Train),
            "validation" => Ok(Segment::Validation),
            "test" => Ok(Segment::Test),
            other => Err(format!("invalid split value {other:?}")),
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the corpus file: a (cleaned) statement plus the experiment
/// state attached to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub nct_id: NctId,
    pub original_category: Label,
    pub dss_text: String,
    pub first_posted_year: u16,
    pub manual_label: Option<Label>,
    pub split: Option<Segment>,
}

impl CorpusRecord {
    pub fn label_for(&self, target: crate::label::Target) -> Option<Label> {
        match target {
            crate::label::Target::OriginalCategory => Some(self.original_category),
            crate::label::Target::ManualLabel => self.manual_label,
        }
    }
}

impl From<TrialRecord> for CorpusRecord {
    fn from(r: TrialRecord) -> Self {
        CorpusRecord {
            nct_id: r.nct_id,
            original_category: r.original_category,
            dss_text: r.dss_text,
            first_posted_year: r.first_posted_year,
            manual_label: None,
            split: None,
        }
    }
}

impl From<CorpusRecord> for TrialRecord {
    fn from(r: CorpusRecord) -> Self {
        TrialRecord {
            nct_id: r.nct_id,
            original_category: r.original_category,
            dss_text: r.dss_text,
            first_posted_year: r.first_posted_year,
        }
    }
}
