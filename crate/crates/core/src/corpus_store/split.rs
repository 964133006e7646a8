//! Seeded, label-stratified train/validation/test partition.
//!
//! Each label stratum is sized independently with largest-remainder rounding
//! (ties go to the earlier segment), then its identifiers are shuffled with a
//! ChaCha8 stream seeded from the split seed and dealt out in segment order.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;
use crate::record::{CorpusRecord, NctId, Segment};

pub const DEFAULT_SPLIT_SEED: u64 = 42;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios(Ratios),
    #[error("label class {label} has {count} records, too few to populate every segment")]
    ClassTooSmall { label: Label, count: usize },
    #[error("record {0} has no label to stratify on")]
    Unlabeled(NctId),
    #[error("duplicate record {0}")]
    Duplicate(NctId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for Ratios {
    fn default() -> Self {
        Ratios {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

const RATIO_SCALE: u64 = 1_000_000;

impl Ratios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, SplitError> {
        let r = Ratios {
            train,
            validation,
            test,
        };
        let parts = r.as_array();
        let ok = parts.iter().all(|p| p.is_finite() && *p >= 0.0)
            && ((parts.iter().sum::<f64>()) - 1.0).abs() < 1e-9;
        if ok {
            Ok(r)
        } else {
            Err(SplitError::InvalidRatios(r))
        }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }

    /// Ratios as integer parts per million summing exactly to the scale.
    fn scaled(&self) -> [u64; 3] {
        let mut s = self.as_array().map(|r| (r * RATIO_SCALE as f64).round() as u64);
        let total: u64 = s.iter().sum();
        // absorb rounding drift into the largest part
        let largest = (0..3).max_by_key(|&i| (s[i], std::cmp::Reverse(i))).unwrap();
        s[largest] = s[largest] + RATIO_SCALE - total;
        s
    }

    /// Largest-remainder allocation of `n` items over the three segments.
    pub fn allocate(&self, n: usize) -> [usize; 3] {
        let scaled = self.scaled();
        let quotas = scaled.map(|s| n as u64 * s);
        let mut sizes = quotas.map(|q| (q / RATIO_SCALE) as usize);
        let remainders = quotas.map(|q| q % RATIO_SCALE);
        let leftover = n - sizes.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
        for &i in order.iter().take(leftover) {
            sizes[i] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: BTreeSet<NctId>,
    pub validation_ids: BTreeSet<NctId>,
    pub test_ids: BTreeSet<NctId>,
    /// `None` when the split was read back from a corpus file without its seed.
    pub seed: Option<u64>,
    pub ratios: Ratios,
}

impl DatasetSplit {
    /// Stratified split over `(id, label)` pairs.
    pub fn stratified<I>(items: I, seed: u64, ratios: Ratios) -> Result<Self, SplitError>
    where
        I: IntoIterator<Item = (NctId, Label)>,
    {
        let ratios = Ratios::new(ratios.train, ratios.validation, ratios.test)?;
        let mut strata: BTreeMap<Label, Vec<NctId>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (id, label) in items {
            if !seen.insert(id.clone()) {
                return Err(SplitError::Duplicate(id));
            }
            strata.entry(label).or_default().push(id);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut segments: [BTreeSet<NctId>; 3] = Default::default();
        let wanted = ratios.as_array().map(|r| r > 0.0);
        for (label, mut ids) in strata {
            let sizes = ratios.allocate(ids.len());
            if (0..3).any(|i| wanted[i] && sizes[i] == 0) {
                return Err(SplitError::ClassTooSmall {
                    label,
                    count: ids.len(),
                });
            }
            ids.sort();
            ids.shuffle(&mut rng);
            let mut iter = ids.into_iter();
            for (segment, size) in segments.iter_mut().zip(sizes) {
                segment.extend(iter.by_ref().take(size));
            }
        }
        let [train_ids, validation_ids, test_ids] = segments;
        Ok(DatasetSplit {
            train_ids,
            validation_ids,
            test_ids,
            seed: Some(seed),
            ratios,
        })
    }

    /// Splits corpus records stratified by their manual label.
    pub fn from_manual_labels(
        records: &[CorpusRecord],
        seed: u64,
        ratios: Ratios,
    ) -> Result<Self, SplitError> {
        let items = records
            .iter()
            .map(|r| {
                r.manual_label
                    .map(|l| (r.nct_id.clone(), l))
                    .ok_or_else(|| SplitError::Unlabeled(r.nct_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::stratified(items, seed, ratios)
    }

    /// Reconstructs a split from the `split` column. Records without a
    /// segment are ignored.
    pub fn from_records(records: &[CorpusRecord], seed: Option<u64>) -> Self {
        let mut segments: [BTreeSet<NctId>; 3] = Default::default();
        for r in records {
            if let Some(s) = r.split {
                segments[s as usize].insert(r.nct_id.clone());
            }
        }
        let total = segments.iter().map(BTreeSet::len).sum::<usize>().max(1) as f64;
        let ratios = Ratios {
            train: segments[0].len() as f64 / total,
            validation: segments[1].len() as f64 / total,
            test: segments[2].len() as f64 / total,
        };
        let [train_ids, validation_ids, test_ids] = segments;
        DatasetSplit {
            train_ids,
            validation_ids,
            test_ids,
            seed,
            ratios,
        }
    }

    pub fn segment(&self, segment: Segment) -> &BTreeSet<NctId> {
        match segment {
            Segment::Train => &self.train_ids,
            Segment::Validation => &self.validation_ids,
            Segment::Test => &self.test_ids,
        }
    }

    pub fn segment_of(&self, id: &NctId) -> Option<Segment> {
        Segment::ALL
            .into_iter()
            .find(|&s| self.segment(s).contains(id))
    }

    pub fn sizes(&self) -> [usize; 3] {
        [
            self.train_ids.len(),
            self.validation_ids.len(),
            self.test_ids.len(),
        ]
    }

    pub fn len(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes each record's segment into its `split` column.
    pub fn apply(&self, records: &mut [CorpusRecord]) {
        for r in records {
            r.split = self.segment_of(&r.nct_id);
        }
    }
}
