//! Epoch loop with patience-based early stopping and best-checkpoint restore.

use serde::{Deserialize, Serialize};

use super::config::StoppingMetric;
use super::ClassifierError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: f64,
    pub validation_macro_f1: f64,
}

impl EpochLog {
    pub fn metric(&self, metric: StoppingMetric) -> f64 {
        match metric {
            StoppingMetric::ValidationAccuracy => self.validation_accuracy,
            StoppingMetric::ValidationMacroF1 => self.validation_macro_f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScore {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Something that can be trained one epoch at a time.
pub trait EpochTrainer {
    type Snapshot;

    /// Runs one epoch and returns its training loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64, ClassifierError>;
    fn validate(&self) -> Result<ValidationScore, ClassifierError>;
    fn snapshot(&self) -> Result<Self::Snapshot, ClassifierError>;
    fn restore(&mut self, snapshot: Self::Snapshot) -> Result<(), ClassifierError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Trains for at most `max_epochs`, stopping once the metric has failed to
/// strictly improve for `patience` consecutive epochs. The trainer is left
/// holding the parameters of the first best epoch.
pub fn train_with_early_stopping<T: EpochTrainer>(
    trainer: &mut T,
    max_epochs: usize,
    patience: usize,
    metric: StoppingMetric,
) -> Result<StoppingOutcome, ClassifierError> {
    let mut log = Vec::with_capacity(max_epochs);
    let mut best: Option<(usize, f64, T::Snapshot)> = None;
    let mut stale = 0;
    for epoch in 1..=max_epochs {
        let train_loss = trainer.train_epoch(epoch)?;
        let v = trainer.validate()?;
        let entry = EpochLog {
            epoch,
            train_loss,
            validation_accuracy: v.accuracy,
            validation_macro_f1: v.macro_f1,
        };
        log.push(entry);
        let score = entry.metric(metric);
        let improved = best.as_ref().is_none_or(|(_, b, _)| score > *b);
        if improved {
            best = Some((epoch, score, trainer.snapshot()?));
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                break;
            }
        }
    }
    let (best_epoch, _, snapshot) = best.ok_or(ClassifierError::EmptySegment("train"))?;
    trainer.restore(snapshot)?;
    Ok(StoppingOutcome { log, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Replays a fixed validation-accuracy curve; the "parameters" are the
    /// epoch number they were produced at.
    struct Scripted {
        curve: Vec<f64>,
        epoch: usize,
    }

    impl EpochTrainer for Scripted {
        type Snapshot = usize;

        fn train_epoch(&mut self, epoch: usize) -> Result<f64, ClassifierError> {
            self.epoch = epoch;
            Ok(1.0 / epoch as f64)
        }

        fn validate(&self) -> Result<ValidationScore, ClassifierError> {
            let a = self.curve[self.epoch - 1];
            Ok(ValidationScore { accuracy: a, macro_f1: a })
        }

        fn snapshot(&self) -> Result<usize, ClassifierError> {
            Ok(self.epoch)
        }

        fn restore(&mut self, s: usize) -> Result<(), ClassifierError> {
            self.epoch = s;
            Ok(())
        }
    }

    fn run(curve: &[f64], max_epochs: usize, patience: usize) -> (StoppingOutcome, usize) {
        let mut t = Scripted {
            curve: curve.to_vec(),
            epoch: 0,
        };
        let out =
            train_with_early_stopping(&mut t, max_epochs, patience, StoppingMetric::ValidationAccuracy).unwrap();
        (out, t.epoch)
    }

    #[test]
    fn plateau_after_epoch_two() {
        let (out, restored) = run(&[0.5, 0.8, 0.8, 0.7, 0.9, 0.9], 6, 2);
        assert_eq!(out.log.len(), 4);
        assert_eq!(out.best_epoch, 2);
        assert_eq!(restored, 2);
    }

    #[test]
    fn keeps_best_not_last() {
        let (out, restored) = run(&[0.5, 0.6, 0.9, 0.8, 0.85, 0.7], 6, 5);
        assert_eq!(out.log.len(), 6);
        assert_eq!(out.best_epoch, 3);
        assert_eq!(restored, 3);
    }

    #[test]
    fn perfect_from_start_stops_after_patience() {
        let (out, _) = run(&[1.0; 6], 6, 2);
        assert_eq!(out.log.len(), 3);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn never_exceeds_max_epochs() {
        let (out, _) = run(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7], 6, 2);
        assert_eq!(out.log.len(), 6);
        assert_eq!(out.best_epoch, 6);
    }
}
