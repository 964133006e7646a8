//! The three-valued availability label shared by registry categories and
//! manual annotations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// IPD availability. The discriminant is the fixed label index used by every
/// model artifact and confusion matrix: 0 = Yes, 1 = No, 2 = Undecided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Yes = 0,
    No = 1,
    Undecided = 2,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid label value {0:?} (expected Yes, No or Undecided)")]
pub struct ParseLabelError(pub String);

impl Label {
    pub const ALL: [Label; 3] = [Label::Yes, Label::No, Label::Undecided];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "Yes",
            Label::No => "No",
            Label::Undecided => "Undecided",
        }
    }

    /// Maps a registry category string (e.g. `"UNDECIDED"`) onto a label,
    /// ignoring case and surrounding whitespace.
    pub fn from_registry(value: &str) -> Option<Label> {
        let value = value.trim();
        Label::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(value))
    }
}

/// Strict parse: only the exact title-case strings are accepted.
impl FromStr for Label {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Yes" => Ok(Label::Yes),
            "No" => Ok(Label::No),
            "Undecided" => Ok(Label::Undecided),
            other => Err(ParseLabelError(other.to_string())),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which label column a classifier learns and is evaluated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    OriginalCategory,
    ManualLabel,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::OriginalCategory => "original_category",
            Target::ManualLabel => "manual_label",
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" | "original_category" => Ok(Target::OriginalCategory),
            "manual" | "manual_label" => Ok(Target::ManualLabel),
            other => Err(format!("unknown target {other:?} (expected original or manual)")),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
