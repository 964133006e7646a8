//! Data-sharing statement pipeline: cleaning, corpus storage and splitting,
//! three-class classification and evaluation.

pub mod classifier;
pub mod corpus_store;
pub mod eval_report;
pub mod label;
pub mod normalizer;
pub mod record;
pub mod synthetic;

pub use label::{Label, Target};
pub use record::{CorpusRecord, NctId, Segment, TrialRecord};
