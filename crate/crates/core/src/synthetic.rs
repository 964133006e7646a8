//! Deterministic synthetic corpora for tests, demos and offline acceptance runs.
//!
//! [`annotated_corpus`] produces statements whose manual label is determined
//! by the wording (with a fraction of deliberately ambiguous texts), and
//! registry categories that agree with the manual label for an exact number
//! of records. [`separable_corpus`] produces texts drawn from three disjoint
//! keyword vocabularies.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::label::Label;
use crate::record::{CorpusRecord, NctId};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub yes: usize,
    pub no: usize,
    pub undecided: usize,
    /// Records whose registry category equals the manual label.
    pub agree: usize,
    /// Fraction of statements drawn from a label-neutral pool.
    pub ambiguous_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 5,000 records with 2,441 / 1,232 / 1,327 manual labels and 3,130
    /// agreements.
    fn default() -> Self {
        SyntheticSpec {
            yes: 2441,
            no: 1232,
            undecided: 1327,
            agree: 3130,
            ambiguous_fraction: 0.12,
            seed: 2024,
        }
    }
}

impl SyntheticSpec {
    pub fn total(&self) -> usize {
        self.yes + self.no + self.undecided
    }
}

const YES_SUBJECTS: &[&str] = &[
    "De-identified individual participant data",
    "Individual participant data (IPD)",
    "All IPD that underlie results in a publication",
    "De-identified IPD for all primary and secondary outcome measures",
    "The anonymised participant-level dataset",
    "Participant data and the data dictionary",
];
const YES_VERBS: &[&str] = &[
    "will be made available",
    "will be shared",
    "will be available",
    "can be accessed",
    "will be deposited and made accessible",
];
const YES_TAILS: &[&str] = &[
    "to other researchers upon reasonable request",
    "to qualified investigators after publication",
    "through a public data repository",
    "to researchers who provide a methodologically sound proposal",
    "via the sponsor's data sharing platform",
    "to anyone who wishes to access the data",
];
const NO_SENTENCES: &[&str] = &[
    "There is no plan to share individual participant data",
    "Individual participant data will not be shared",
    "IPD will not be made available to other researchers",
    "The investigators do not intend to share participant-level data",
    "Data will not be shared outside the study team",
    "We will not share IPD",
];
const NO_REASONS: &[&str] = &[
    "due to privacy regulations",
    "because participants did not consent to data sharing",
    "as required by the ethics committee",
    "to protect patient confidentiality",
    "owing to national data protection law",
    "",
];
const UNDECIDED_SENTENCES: &[&str] = &[
    "It is undecided whether IPD will be available to other researchers",
    "A decision on sharing individual participant data has not yet been made",
    "The data sharing plan is still pending",
    "Whether participant data will be shared is currently unclear",
    "Sharing of IPD is under consideration and has not been determined",
    "The investigators have not yet decided if data will be shared",
];
const UNDECIDED_REASONS: &[&str] = &[
    "Clearance is required first from ethical bodies and supervisors",
    "This will depend on approval by the sponsor",
    "A decision will be made after the study ends",
    "Approval from the institutional review board is pending",
    "",
];
const AMBIGUOUS: &[&str] = &[
    "Please contact the principal investigator for further information",
    "Data requests should be directed to the corresponding author",
    "The study protocol and statistical analysis plan are described in the publication",
    "Information about the trial is available on the sponsor website",
    "Requests will be reviewed by the study steering committee",
    "Additional documents may be provided by the sponsor",
];

fn statement(label: Label, rng: &mut ChaCha8Rng, ambiguous: bool) -> String {
    let pick = |xs: &[&'static str], rng: &mut ChaCha8Rng| *xs.choose(rng).expect("non-empty bank");
    if ambiguous {
        let months = rng.random_range(3..=36);
        return format!("{}. Review may take up to {months} months.", pick(AMBIGUOUS, rng));
    }
    let months = rng.random_range(3..=36);
    match label {
        Label::Yes => format!(
            "{} {} {} beginning {months} months after completion of the study.",
            pick(YES_SUBJECTS, rng),
            pick(YES_VERBS, rng),
            pick(YES_TAILS, rng)
        ),
        Label::No => {
            let reason = pick(NO_REASONS, rng);
            if reason.is_empty() {
                format!("{}. Enrollment lasted {months} months.", pick(NO_SENTENCES, rng))
            } else {
                format!("{} {reason}. Enrollment lasted {months} months.", pick(NO_SENTENCES, rng))
            }
        }
        Label::Undecided => {
            let reason = pick(UNDECIDED_REASONS, rng);
            format!(
                "{}. {reason} Follow-up is planned for {months} months.",
                pick(UNDECIDED_SENTENCES, rng)
            )
            .replace("  ", " ")
        }
    }
}

fn years(rng: &mut ChaCha8Rng) -> u16 {
    // mostly 2018 onwards, with a thin tail of earlier registrations
    if rng.random_bool(0.04) {
        rng.random_range(2010..=2017)
    } else {
        rng.random_range(2018..=2023)
    }
}

fn other_label(label: Label, rng: &mut ChaCha8Rng) -> Label {
    let others: Vec<Label> = Label::ALL.into_iter().filter(|&l| l != label).collect();
    *others.choose(rng).expect("two other labels")
}

fn ids(n: usize, rng: &mut ChaCha8Rng) -> Vec<NctId> {
    let mut next = 3_000_000u32;
    (0..n)
        .map(|_| {
            next += rng.random_range(1..=40);
            NctId::new(format!("NCT{next:08}")).expect("well-formed id")
        })
        .collect()
}

/// Annotated corpus with the exact class counts and agreement count of `spec`.
/// Records are returned in identifier order with no split assigned.
pub fn annotated_corpus(spec: &SyntheticSpec) -> Vec<CorpusRecord> {
    assert!(spec.agree <= spec.total(), "agreement count exceeds corpus size");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Yes, spec.yes)
        .chain(std::iter::repeat_n(Label::No, spec.no))
        .chain(std::iter::repeat_n(Label::Undecided, spec.undecided))
        .collect();
    labels.shuffle(&mut rng);
    let mut agrees = vec![false; labels.len()];
    agrees[..spec.agree].fill(true);
    agrees.shuffle(&mut rng);
    let ids = ids(labels.len(), &mut rng);
    labels
        .into_iter()
        .zip(agrees)
        .zip(ids)
        .map(|((manual, agree), nct_id)| {
            let ambiguous = rng.random_bool(spec.ambiguous_fraction);
            let dss_text = statement(manual, &mut rng, ambiguous);
            let original_category = if agree { manual } else { other_label(manual, &mut rng) };
            CorpusRecord {
                nct_id,
                original_category,
                dss_text,
                first_posted_year: years(&mut rng),
                manual_label: Some(manual),
                split: None,
            }
        })
        .collect()
}

const YES_KEYWORDS: &[&str] = &["available", "shared", "access", "repository", "request"];
const NO_KEYWORDS: &[&str] = &["not", "no", "confidential", "privacy", "cannot"];
const UNDECIDED_KEYWORDS: &[&str] = &["undecided", "pending", "unclear", "whether", "determined"];

pub fn keywords(label: Label) -> &'static [&'static str] {
    match label {
        Label::Yes => YES_KEYWORDS,
        Label::No => NO_KEYWORDS,
        Label::Undecided => UNDECIDED_KEYWORDS,
    }
}

/// `per_class` records per label, each text six words from its label's
/// keyword list. The registry category is the manual label rotated by one
/// (Yes -> No -> Undecided -> Yes), so the two columns disagree everywhere.
pub fn separable_corpus(per_class: usize, seed: u64) -> Vec<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = ids(per_class * 3, &mut rng);
    let mut labels: Vec<Label> = Label::ALL
        .into_iter()
        .flat_map(|l| std::iter::repeat_n(l, per_class))
        .collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .zip(ids)
        .map(|(label, nct_id)| {
            let words: Vec<&str> = (0..6)
                .map(|_| *keywords(label).choose(&mut rng).expect("keywords"))
                .collect();
            CorpusRecord {
                nct_id,
                original_category: rotate(label),
                dss_text: words.join(" "),
                first_posted_year: 2020,
                manual_label: Some(label),
                split: None,
            }
        })
        .collect()
}

pub fn rotate(label: Label) -> Label {
    match label {
        Label::Yes => Label::No,
        Label::No => Label::Undecided,
        Label::Undecided => Label::Yes,
    }
}
