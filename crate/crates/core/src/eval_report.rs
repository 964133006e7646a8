//! Evaluation: confusion matrices, accuracy and averaged precision/F1,
//! agreement between registry categories and manual labels, discrepancy
//! listings and yearly counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassifierConfig;
use crate::label::{Label, Target};
use crate::record::{CorpusRecord, NctId};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold and predicted sequences differ in length ({golds} vs {preds})")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("record {0} lacks a manual label")]
    MissingLabel(NctId),
}

/// Rows are gold labels, columns predictions, both in `Label` index order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn add(&mut self, gold: Label, pred: Label) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, gold: Label) -> u64 {
        self.counts[gold.index()].iter().sum()
    }

    pub fn col_sum(&self, pred: Label) -> u64 {
        self.counts.iter().map(|row| row[pred.index()]).sum()
    }

    pub fn get(&self, gold: Label, pred: Label) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12}", "gold\\pred");
        for l in Label::ALL {
            let _ = write!(s, "{:>10}", l.as_str());
        }
        s.push('\n');
        for g in Label::ALL {
            let _ = write!(s, "{:<12}", g.as_str());
            for p in Label::ALL {
                let _ = write!(s, "{:>10}", self.get(g, p));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(golds: &[Label], preds: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    if golds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut m = ConfusionMatrix::default();
    for (&g, &p) in golds.iter().zip(preds) {
        m.add(g, p);
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    /// Support-weighted means.
    pub weighted_precision: f64,
    pub weighted_f1: f64,
    /// Indexed by `Label::index`.
    pub per_class: [ClassScores; 3],
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(matrix: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = matrix.total();
    if total == 0 {
        return Err(EvalError::EmptyInput);
    }
    let per_class = Label::ALL.map(|l| {
        let tp = matrix.get(l, l);
        let precision = ratio(tp, matrix.col_sum(l));
        let recall = ratio(tp, matrix.row_sum(l));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores {
            precision,
            recall,
            f1,
            support: matrix.row_sum(l),
        }
    });
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
    let weighted = |f: fn(&ClassScores) -> f64| {
        per_class
            .iter()
            .map(|c| f(c) * c.support as f64)
            .sum::<f64>()
            / total as f64
    };
    Ok(Metrics {
        accuracy: ratio(matrix.trace(), total),
        macro_precision: mean(|c| c.precision),
        macro_f1: mean(|c| c.f1),
        weighted_precision: weighted(|c| c.precision),
        weighted_f1: weighted(|c| c.f1),
        per_class,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Weighted,
}

/// Result of evaluating one classifier run. `precision` and `f1` are the
/// averages named by `averaging`; both schemes are always reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub target: Target,
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_f1: f64,
    pub matrix: ConfusionMatrix,
    pub config_echo: ClassifierConfig,
    pub split_seed: Option<u64>,
    pub evaluated_records: u64,
}

impl EvaluationReport {
    pub fn new(
        target: Target,
        averaging: Averaging,
        matrix: ConfusionMatrix,
        config_echo: ClassifierConfig,
        split_seed: Option<u64>,
    ) -> Result<Self, EvalError> {
        let m = metrics(&matrix)?;
        let (precision, f1) = match averaging {
            Averaging::Macro => (m.macro_precision, m.macro_f1),
            Averaging::Weighted => (m.weighted_precision, m.weighted_f1),
        };
        Ok(EvaluationReport {
            target,
            averaging,
            accuracy: m.accuracy,
            precision,
            f1,
            macro_precision: m.macro_precision,
            macro_f1: m.macro_f1,
            weighted_precision: m.weighted_precision,
            weighted_f1: m.weighted_f1,
            matrix,
            config_echo,
            split_seed,
            evaluated_records: matrix.total(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "target:     {}", self.target);
        let _ = writeln!(s, "averaging:  {:?}", self.averaging);
        let _ = writeln!(s, "records:    {}", self.evaluated_records);
        let _ = writeln!(s, "accuracy:   {:.3}", self.accuracy);
        let _ = writeln!(s, "precision:  {:.3}", self.precision);
        let _ = writeln!(s, "f1:         {:.3}", self.f1);
        s.push('\n');
        s.push_str(&self.matrix.to_table());
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub agree_count: u64,
    pub total: u64,
    /// `agree_count / total`, or 0 for an empty input.
    pub agree_fraction: f64,
    /// Rows: original category, columns: manual label.
    pub per_pair_matrix: ConfusionMatrix,
}

impl AgreementReport {
    pub fn from_pairs<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> Self {
        let mut m = ConfusionMatrix::default();
        for (original, manual) in pairs {
            m.add(original, manual);
        }
        AgreementReport {
            agree_count: m.trace(),
            total: m.total(),
            agree_fraction: ratio(m.trace(), m.total()),
            per_pair_matrix: m,
        }
    }
}

fn both_labels(r: &CorpusRecord) -> Result<(Label, Label), EvalError> {
    r.manual_label
        .map(|m| (r.original_category, m))
        .ok_or_else(|| EvalError::MissingLabel(r.nct_id.clone()))
}

pub fn agreement(records: &[CorpusRecord]) -> Result<AgreementReport, EvalError> {
    let pairs = records.iter().map(both_labels).collect::<Result<Vec<_>, _>>()?;
    Ok(AgreementReport::from_pairs(pairs))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub nct_id: NctId,
    pub original_category: Label,
    pub manual_label: Label,
    pub dss_text: String,
}

pub fn discrepancies(records: &[CorpusRecord]) -> Result<Vec<Discrepancy>, EvalError> {
    let mut out = Vec::new();
    for r in records {
        let (original, manual) = both_labels(r)?;
        if original != manual {
            out.push(Discrepancy {
                nct_id: r.nct_id.clone(),
                original_category: original,
                manual_label: manual,
                dss_text: r.dss_text.clone(),
            });
        }
    }
    out.sort_by(|a, b| a.nct_id.cmp(&b.nct_id));
    Ok(out)
}

/// Records per first-posted year, ascending; records without a year are skipped.
pub fn yearly_counts<'a, I>(records: I) -> Vec<(u16, u64)>
where
    I: IntoIterator<Item = &'a CorpusRecord>,
{
    let mut counts: BTreeMap<u16, u64> = BTreeMap::new();
    for r in records {
        if r.first_posted_year != 0 {
            *counts.entry(r.first_posted_year).or_default() += 1;
        }
    }
    counts.into_iter().collect()
}

pub fn write_yearly_csv<W: Write>(writer: W, series: &[(u16, u64)]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["year", "count"])?;
    for (year, count) in series {
        wtr.write_record([year.to_string(), count.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
