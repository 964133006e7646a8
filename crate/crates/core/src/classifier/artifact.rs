//! Single-file model bundle.
//!
//! Layout: the magic line `DSSMODEL`, one line of JSON metadata, then the raw
//! weight payload (empty for the baseline, whose weights live in the JSON).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::label::Label;

use super::baseline::BaselineModel;
use super::config::ClassifierConfig;
use super::early_stopping::EpochLog;
use super::encoder::EncoderClassifier;
use super::ClassifierError;

const MAGIC: &[u8] = b"DSSMODEL\n";
pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

pub enum TrainedModel {
    Baseline(BaselineModel),
    Encoder(Box<EncoderClassifier>),
}

impl std::fmt::Debug for TrainedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainedModel::Baseline(m) => f
                .debug_struct("Baseline")
                .field("features", &m.vectorizer.vocabulary_size())
                .finish(),
            TrainedModel::Encoder(m) => f
                .debug_struct("Encoder")
                .field("vocab", &m.tokenizer().vocab_size())
                .finish(),
        }
    }
}

#[derive(Debug)]
pub struct ModelArtifact {
    pub config: ClassifierConfig,
    /// Always `[Yes, No, Undecided]`.
    pub label_order: [Label; 3],
    pub training_log: Vec<EpochLog>,
    /// 1-based epoch whose parameters the artifact holds.
    pub best_epoch: usize,
    pub split_seed: Option<u64>,
    pub model: TrainedModel,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Parameters {
    Baseline {
        model: BaselineModel,
    },
    Encoder {
        bert_config: String,
        vocab: Vec<String>,
        lowercase: bool,
        max_tokens: usize,
        weights_len: usize,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ClassifierConfig,
    label_order: [Label; 3],
    training_log: Vec<EpochLog>,
    best_epoch: usize,
    split_seed: Option<u64>,
    parameters: Parameters,
}

fn io_err(e: std::io::Error) -> ClassifierError {
    ClassifierError::Artifact(e.to_string())
}

impl ModelArtifact {
    /// Epoch log entry for the epoch the artifact's parameters come from.
    pub fn best_log(&self) -> Option<&EpochLog> {
        self.training_log.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ClassifierError> {
        let (parameters, payload) = match &self.model {
            TrainedModel::Baseline(m) => (Parameters::Baseline { model: m.clone() }, Vec::new()),
            TrainedModel::Encoder(m) => {
                let bytes = m.weights_bytes()?;
                (
                    Parameters::Encoder {
                        bert_config: m.bert_config().to_string(),
                        vocab: m.tokenizer().vocab().to_vec(),
                        lowercase: m.tokenizer().lowercase(),
                        max_tokens: m.max_tokens(),
                        weights_len: bytes.len(),
                    },
                    bytes,
                )
            }
        };
        let header = Header {
            format_version: ARTIFACT_FORMAT_VERSION,
            config: self.config.clone(),
            label_order: self.label_order,
            training_log: self.training_log.clone(),
            best_epoch: self.best_epoch,
            split_seed: self.split_seed,
            parameters,
        };
        let json = serde_json::to_vec(&header).map_err(|e| ClassifierError::Artifact(e.to_string()))?;
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&json).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
        w.write_all(&payload).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ClassifierError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(io_err)?;
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| ClassifierError::Artifact("not a model artifact".into()))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ClassifierError::Artifact("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&rest[..nl])
            .map_err(|e| ClassifierError::Artifact(e.to_string()))?;
        if header.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ClassifierError::Artifact(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        if header.label_order != Label::ALL {
            return Err(ClassifierError::Artifact("unexpected label order".into()));
        }
        let payload = &rest[nl + 1..];
        let model = match header.parameters {
            Parameters::Baseline { model } => TrainedModel::Baseline(model),
            Parameters::Encoder {
                bert_config,
                vocab,
                lowercase,
                max_tokens,
                weights_len,
            } => {
                if payload.len() != weights_len {
                    return Err(ClassifierError::Artifact(format!(
                        "weight payload is {} bytes, header says {weights_len}",
                        payload.len()
                    )));
                }
                TrainedModel::Encoder(Box::new(EncoderClassifier::from_parts(
                    bert_config,
                    vocab,
                    lowercase,
                    max_tokens,
                    payload,
                )?))
            }
        };
        Ok(ModelArtifact {
            config: header.config,
            label_order: header.label_order,
            training_log: header.training_log,
            best_epoch: header.best_epoch,
            split_seed: header.split_seed,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let file = std::fs::File::create(path).map_err(io_err)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ClassifierError::Artifact(format!("{}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
