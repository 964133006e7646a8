//! Three-class statement classifiers: a fine-tuned pre-trained encoder and a
//! TF-IDF / logistic-regression baseline sharing one train/predict contract.

mod artifact;
pub mod baseline;
mod config;
pub mod early_stopping;
pub mod encoder;
pub mod tokenizer;

use thiserror::Error;

use crate::corpus_store::DatasetSplit;
use crate::eval_report::EvalError;
use crate::label::{Label, Target};
use crate::record::{CorpusRecord, NctId};

pub use artifact::{ModelArtifact, TrainedModel, ARTIFACT_FORMAT_VERSION};
pub use baseline::BaselineModel;
pub use config::{
    Backend, BaselineOptions, ClassifierConfig, EncoderOptions, StoppingMetric, DEFAULT_BASELINE_LR,
    DEFAULT_ENCODER_LR,
};
pub use early_stopping::{train_with_early_stopping, EpochLog, EpochTrainer, StoppingOutcome, ValidationScore};
pub use encoder::{DefaultProvider, EncoderClassifier, EncoderSource, ModelProvider, MODEL_DIR_ENV};
pub use tokenizer::WordPieceTokenizer;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("{0} segment is empty")]
    EmptySegment(&'static str),
    #[error("record {nct_id} has no {target} label")]
    UnlabeledRecord { nct_id: NctId, target: Target },
    #[error("checkpoint {name} unavailable: {reason}")]
    CheckpointUnavailable { name: String, reason: String },
    #[error("vocabulary unavailable: {0}")]
    VocabularyUnavailable(String),
    #[error("input text is empty")]
    EmptyText,
    #[error("configuration: {0}")]
    Config(String),
    #[error("tensor backend: {0}")]
    Tensor(String),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Probabilities in label index order; they sum to 1.
    pub scores: [f64; 3],
}

impl Prediction {
    pub fn from_scores(scores: [f64; 3]) -> Self {
        Prediction {
            label: argmax(&scores),
            scores,
        }
    }
}

/// Highest-scoring label; ties resolve to the lower label index.
pub fn argmax(scores: &[f64; 3]) -> Label {
    let mut best = 0;
    for i in 1..3 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Label::from_index(best).expect("index < 3")
}

/// `[CLS] … [SEP]` token ids for the given tokenizer, capped at `max_tokens`.
pub fn tokenize_for_encoder(
    tokenizer: &WordPieceTokenizer,
    text: &str,
    max_tokens: usize,
) -> Result<Vec<u32>, ClassifierError> {
    tokenizer.encode(text, max_tokens)
}

type Labeled<'a> = Vec<(&'a str, Label)>;

fn segment_items<'a>(
    corpus: &'a [CorpusRecord],
    split: &DatasetSplit,
    target: Target,
) -> Result<(Labeled<'a>, Labeled<'a>), ClassifierError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for r in corpus {
        let bucket = if split.train_ids.contains(&r.nct_id) {
            &mut train
        } else if split.validation_ids.contains(&r.nct_id) {
            &mut val
        } else {
            continue;
        };
        let label = r.label_for(target).ok_or_else(|| ClassifierError::UnlabeledRecord {
            nct_id: r.nct_id.clone(),
            target,
        })?;
        bucket.push((r.dss_text.as_str(), label));
    }
    if train.is_empty() {
        return Err(ClassifierError::EmptySegment("train"));
    }
    if val.is_empty() {
        return Err(ClassifierError::EmptySegment("validation"));
    }
    Ok((train, val))
}

/// Trains with the default model provider (see [`DefaultProvider::from_env`]).
pub fn train(
    config: &ClassifierConfig,
    corpus: &[CorpusRecord],
    split: &DatasetSplit,
) -> Result<ModelArtifact, ClassifierError> {
    train_with_provider(config, corpus, split, &DefaultProvider::from_env())
}

/// Trains on the split's train segment, early-stopping on the validation
/// segment. The returned artifact holds the best validation epoch.
pub fn train_with_provider(
    config: &ClassifierConfig,
    corpus: &[CorpusRecord],
    split: &DatasetSplit,
    provider: &dyn ModelProvider,
) -> Result<ModelArtifact, ClassifierError> {
    config.validate()?;
    let (train, val) = segment_items(corpus, split, config.target)?;
    let (model, outcome) = match config.backend {
        Backend::Baseline => {
            let mut trainer = baseline::BaselineTrainer::new(
                &train,
                &val,
                config.baseline.clone(),
                config.learning_rate,
                config.max_sequence_tokens,
            );
            let outcome = train_with_early_stopping(
                &mut trainer,
                config.max_epochs,
                config.patience,
                config.early_stopping_metric,
            )?;
            (TrainedModel::Baseline(trainer.into_model()), outcome)
        }
        Backend::Encoder => {
            let name = config.checkpoint_name.as_deref().unwrap_or_default();
            let source = provider.load(name)?;
            let model = EncoderClassifier::build(source, config.max_sequence_tokens, config.seed)?;
            let mut trainer = encoder::EncoderTrainer::new(
                model,
                &train,
                &val,
                config.learning_rate,
                config.encoder.weight_decay,
                config.batch_size,
                config.seed,
            )?;
            let outcome = train_with_early_stopping(
                &mut trainer,
                config.max_epochs,
                config.patience,
                config.early_stopping_metric,
            )?;
            (TrainedModel::Encoder(Box::new(trainer.into_model())), outcome)
        }
    };
    Ok(ModelArtifact {
        config: config.clone(),
        label_order: Label::ALL,
        training_log: outcome.log,
        best_epoch: outcome.best_epoch,
        split_seed: split.seed,
        model,
    })
}

pub fn predict(artifact: &ModelArtifact, text: &str) -> Result<Prediction, ClassifierError> {
    let mut out = predict_batch(artifact, &[text])?;
    Ok(out.pop().expect("one prediction per input"))
}

/// Order-preserving batch prediction.
pub fn predict_batch<S: AsRef<str>>(
    artifact: &ModelArtifact,
    texts: &[S],
) -> Result<Vec<Prediction>, ClassifierError> {
    if texts.iter().any(|t| t.as_ref().trim().is_empty()) {
        return Err(ClassifierError::EmptyText);
    }
    match &artifact.model {
        TrainedModel::Baseline(m) => Ok(texts
            .iter()
            .map(|t| Prediction::from_scores(m.probabilities(t.as_ref())))
            .collect()),
        TrainedModel::Encoder(m) => {
            let mut out = Vec::with_capacity(texts.len());
            for chunk in texts.chunks(32) {
                let seqs = chunk
                    .iter()
                    .map(|t| m.tokenize(t.as_ref()))
                    .collect::<Result<Vec<_>, _>>()?;
                out.extend(m.probabilities(&seqs)?.into_iter().map(Prediction::from_scores));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_to_lower_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), Label::No);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), Label::Yes);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), Label::Undecided);
    }
}
