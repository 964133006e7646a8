//! Labeling service: hands out one unlabeled statement at a time under a
//! lease, hides the registry category from the annotator, and commits each
//! label durably through the corpus store before acknowledging it.

pub mod http;
pub mod service;

pub use http::{router, serve};
pub use service::{
    AnnotationService, Clock, LabelSubmission, ManualClock, ProgressStats, SubmitError, SubmitOutcome, SystemClock,
    Task, DEFAULT_LEASE_MINUTES,
};
