use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::label::Target;

use super::ClassifierError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Encoder,
    Baseline,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingMetric {
    #[default]
    ValidationAccuracy,
    ValidationMacroF1,
}

/// Solver settings for the TF-IDF / logistic-regression backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineOptions {
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    /// Full-batch gradient steps per epoch.
    pub steps_per_epoch: usize,
    /// Longest n-gram used as a feature.
    pub ngram_max: usize,
    /// Minimum document frequency for a feature to enter the vocabulary.
    pub min_df: usize,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            l2: 1e-4,
            steps_per_epoch: 50,
            ngram_max: 2,
            min_df: 1,
        }
    }
}

/// Settings for the fine-tuned encoder backend beyond the shared fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderOptions {
    pub weight_decay: f64,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        EncoderOptions { weight_decay: 0.01 }
    }
}

pub const DEFAULT_ENCODER_LR: f64 = 2e-5;
pub const DEFAULT_BASELINE_LR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub backend: Backend,
    /// Encoder checkpoint name; unused by the baseline.
    pub checkpoint_name: Option<String>,
    pub target: Target,
    pub max_sequence_tokens: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub early_stopping_metric: StoppingMetric,
    pub baseline: BaselineOptions,
    pub encoder: EncoderOptions,
}

/// On-disk form; omitted keys take backend-dependent defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    backend: Backend,
    checkpoint_name: Option<String>,
    target: Option<Target>,
    max_sequence_tokens: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    seed: Option<u64>,
    early_stopping_metric: Option<StoppingMetric>,
    #[serde(default)]
    baseline: BaselineOptions,
    #[serde(default)]
    encoder: EncoderOptions,
}

impl ClassifierConfig {
    pub fn baseline(target: Target) -> Self {
        ClassifierConfig {
            backend: Backend::Baseline,
            checkpoint_name: None,
            target,
            max_sequence_tokens: 128,
            learning_rate: DEFAULT_BASELINE_LR,
            batch_size: 16,
            max_epochs: 6,
            patience: 2,
            seed: 42,
            early_stopping_metric: StoppingMetric::ValidationAccuracy,
            baseline: BaselineOptions::default(),
            encoder: EncoderOptions::default(),
        }
    }

    pub fn encoder(checkpoint: impl Into<String>, target: Target) -> Self {
        ClassifierConfig {
            backend: Backend::Encoder,
            checkpoint_name: Some(checkpoint.into()),
            learning_rate: DEFAULT_ENCODER_LR,
            ..ClassifierConfig::baseline(target)
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ClassifierError> {
        let raw: RawConfig =
            toml::from_str(s).map_err(|e| ClassifierError::Config(e.to_string()))?;
        let base = match raw.backend {
            Backend::Baseline => ClassifierConfig::baseline(Target::ManualLabel),
            Backend::Encoder => ClassifierConfig::encoder(String::new(), Target::ManualLabel),
        };
        let config = ClassifierConfig {
            backend: raw.backend,
            checkpoint_name: raw.checkpoint_name,
            target: raw.target.unwrap_or(base.target),
            max_sequence_tokens: raw.max_sequence_tokens.unwrap_or(base.max_sequence_tokens),
            learning_rate: raw.learning_rate.unwrap_or(base.learning_rate),
            batch_size: raw.batch_size.unwrap_or(base.batch_size),
            max_epochs: raw.max_epochs.unwrap_or(base.max_epochs),
            patience: raw.patience.unwrap_or(base.patience),
            seed: raw.seed.unwrap_or(base.seed),
            early_stopping_metric: raw.early_stopping_metric.unwrap_or_default(),
            baseline: raw.baseline,
            encoder: raw.encoder,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClassifierError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |msg: &str| Err(ClassifierError::Config(msg.to_string()));
        if self.max_sequence_tokens < 2 {
            return bad("max_sequence_tokens must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if self.backend == Backend::Encoder
            && self.checkpoint_name.as_deref().is_none_or(str::is_empty)
        {
            return bad("encoder backend requires checkpoint_name");
        }
        if self.baseline.ngram_max == 0 || self.baseline.steps_per_epoch == 0 {
            return bad("baseline ngram_max and steps_per_epoch must be positive");
        }
        Ok(())
    }
}
