//! Pre-trained BERT-style encoder with a pooled three-way classification head.
//!
//! Checkpoints are resolved by name through a [`ModelProvider`]. The default
//! provider serves `stub:*` names as tiny randomly initialized encoders with a
//! built-in vocabulary, and any other name as a directory under the model root
//! holding `config.json`, `vocab.txt` and `model.safetensors`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::{linear, AdamW, Linear, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use candle_transformers::models::bert::{BertModel, Config as BertConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::eval_report::{confusion, metrics};
use crate::label::Label;

use super::early_stopping::{EpochTrainer, ValidationScore};
use super::tokenizer::{stub_vocabulary, WordPieceTokenizer};
use super::{argmax, ClassifierError};

pub const MODEL_DIR_ENV: &str = "DSS_MODEL_DIR";
const STUB_PREFIX: &str = "stub:";

impl From<candle_core::Error> for ClassifierError {
    fn from(e: candle_core::Error) -> Self {
        ClassifierError::Tensor(e.to_string())
    }
}

/// Everything needed to instantiate an encoder for fine-tuning.
pub struct EncoderSource {
    /// `config.json` contents.
    pub bert_config: String,
    pub tokenizer: WordPieceTokenizer,
    /// Pre-trained tensors by checkpoint name; `None` for random initialization.
    pub pretrained: Option<HashMap<String, Tensor>>,
}

pub trait ModelProvider {
    fn load(&self, checkpoint: &str) -> Result<EncoderSource, ClassifierError>;
}

fn stub_config(vocab_size: usize) -> String {
    serde_json::json!({
        "vocab_size": vocab_size,
        "hidden_size": 32,
        "num_hidden_layers": 2,
        "num_attention_heads": 4,
        "intermediate_size": 64,
        "hidden_act": "gelu",
        "hidden_dropout_prob": 0.0,
        "max_position_embeddings": 512,
        "type_vocab_size": 2,
        "initializer_range": 0.2,
        "layer_norm_eps": 1e-12,
        "pad_token_id": 0,
        "model_type": "bert"
    })
    .to_string()
}

/// Resolves `stub:*` names to random tiny encoders and other names to
/// directories under `model_dir`.
#[derive(Debug, Clone)]
pub struct DefaultProvider {
    pub model_dir: PathBuf,
}

impl DefaultProvider {
    pub fn new(model_dir: impl Into<PathBuf>) -> Self {
        DefaultProvider {
            model_dir: model_dir.into(),
        }
    }

    /// Model root from `DSS_MODEL_DIR`, falling back to `./models`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| "models".into()))
    }
}

impl ModelProvider for DefaultProvider {
    fn load(&self, checkpoint: &str) -> Result<EncoderSource, ClassifierError> {
        if checkpoint.starts_with(STUB_PREFIX) {
            let tokenizer = WordPieceTokenizer::new(stub_vocabulary(), true)?;
            return Ok(EncoderSource {
                bert_config: stub_config(tokenizer.vocab_size()),
                tokenizer,
                pretrained: None,
            });
        }
        let dir = self.model_dir.join(checkpoint);
        let unavailable = |reason: String| ClassifierError::CheckpointUnavailable {
            name: checkpoint.to_string(),
            reason,
        };
        let read = |file: &str| {
            std::fs::read_to_string(dir.join(file))
                .map_err(|e| unavailable(format!("{}: {e}", dir.join(file).display())))
        };
        let bert_config = read("config.json")?;
        let lowercase = lowercase_flag(&dir);
        let tokenizer = WordPieceTokenizer::from_vocab_file(&dir.join("vocab.txt"), lowercase)?;
        let weights_path = dir.join("model.safetensors");
        let bytes = std::fs::read(&weights_path)
            .map_err(|e| unavailable(format!("{}: {e}", weights_path.display())))?;
        let pretrained = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
        Ok(EncoderSource {
            bert_config,
            tokenizer,
            pretrained: Some(pretrained),
        })
    }
}

/// `do_lower_case` from `tokenizer_config.json`; uncased when absent.
fn lowercase_flag(dir: &Path) -> bool {
    std::fs::read_to_string(dir.join("tokenizer_config.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v.get("do_lower_case").and_then(|b| b.as_bool()))
        .unwrap_or(true)
}

/// Maps checkpoint tensor names onto ours: drops the `bert.` prefix and the
/// legacy `gamma`/`beta` layer-norm names.
fn canonical_name(name: &str) -> String {
    let name = name.strip_prefix("bert.").unwrap_or(name);
    if let Some(stem) = name.strip_suffix(".gamma") {
        format!("{stem}.weight")
    } else if let Some(stem) = name.strip_suffix(".beta") {
        format!("{stem}.bias")
    } else {
        name.to_string()
    }
}

/// A BERT encoder plus pooler and linear head, ready for training or inference.
pub struct EncoderClassifier {
    bert: BertModel,
    pooler: Linear,
    head: Linear,
    varmap: VarMap,
    bert_config: String,
    tokenizer: WordPieceTokenizer,
    max_tokens: usize,
}

impl EncoderClassifier {
    /// Builds the network, initializes every parameter from `seed` and then
    /// overwrites encoder parameters with pre-trained tensors when present.
    pub fn build(source: EncoderSource, max_tokens: usize, seed: u64) -> Result<Self, ClassifierError> {
        let config: BertConfig = serde_json::from_str(&source.bert_config)
            .map_err(|e| ClassifierError::Config(format!("encoder config.json: {e}")))?;
        if config.vocab_size < source.tokenizer.vocab_size() {
            return Err(ClassifierError::Config(format!(
                "vocabulary has {} tokens but the encoder embeds only {}",
                source.tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        let max_tokens = max_tokens.min(config.max_position_embeddings);
        let varmap = VarMap::new();
        let (bert, pooler, head) = Self::layers(&varmap, &config)?;
        init_parameters(&varmap, config.initializer_range, seed)?;
        if let Some(pretrained) = source.pretrained {
            load_pretrained(&varmap, pretrained)?;
        }
        Ok(EncoderClassifier {
            bert,
            pooler,
            head,
            varmap,
            bert_config: source.bert_config,
            tokenizer: source.tokenizer,
            max_tokens,
        })
    }

    fn layers(varmap: &VarMap, config: &BertConfig) -> Result<(BertModel, Linear, Linear), ClassifierError> {
        let vb = VarBuilder::from_varmap(varmap, DType::F32, &Device::Cpu);
        let bert = BertModel::load(vb.clone(), config)?;
        let pooler = linear(config.hidden_size, config.hidden_size, vb.pp("pooler").pp("dense"))?;
        let head = linear(config.hidden_size, Label::COUNT, vb.pp("classifier"))?;
        Ok((bert, pooler, head))
    }

    /// Restores a classifier from its serialized parts.
    pub fn from_parts(
        bert_config: String,
        vocab: Vec<String>,
        lowercase: bool,
        max_tokens: usize,
        weights: &[u8],
    ) -> Result<Self, ClassifierError> {
        let tokenizer = WordPieceTokenizer::new(vocab, lowercase)?;
        let config: BertConfig = serde_json::from_str(&bert_config)
            .map_err(|e| ClassifierError::Config(format!("encoder config: {e}")))?;
        let varmap = VarMap::new();
        let (bert, pooler, head) = Self::layers(&varmap, &config)?;
        let tensors = candle_core::safetensors::load_buffer(weights, &Device::Cpu)?;
        let vars = varmap.data().lock().unwrap().clone();
        for (name, var) in vars {
            let t = tensors
                .get(&name)
                .ok_or_else(|| ClassifierError::Artifact(format!("missing tensor {name}")))?;
            var.set(t)?;
        }
        Ok(EncoderClassifier {
            bert,
            pooler,
            head,
            varmap,
            bert_config,
            tokenizer,
            max_tokens,
        })
    }

    pub fn bert_config(&self) -> &str {
        &self.bert_config
    }

    pub fn tokenizer(&self) -> &WordPieceTokenizer {
        &self.tokenizer
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    /// All parameters as a safetensors buffer.
    pub fn weights_bytes(&self) -> Result<Vec<u8>, ClassifierError> {
        let tensors: Vec<(String, Tensor)> = sorted_vars(&self.varmap)
            .into_iter()
            .map(|(n, v)| (n, v.as_tensor().clone()))
            .collect();
        safetensors::serialize(tensors.iter().map(|(n, t)| (n.as_str(), t)), None)
            .map_err(|e| ClassifierError::Artifact(e.to_string()))
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, ClassifierError> {
        self.tokenizer.encode(text, self.max_tokens)
    }

    fn logits(&self, batch: &[Vec<u32>]) -> Result<Tensor, ClassifierError> {
        let len = batch.iter().map(Vec::len).max().unwrap_or(0);
        let pad = self.tokenizer.pad_id();
        let mut ids = Vec::with_capacity(batch.len() * len);
        let mut mask = Vec::with_capacity(batch.len() * len);
        for seq in batch {
            ids.extend(seq.iter().copied().chain(std::iter::repeat_n(pad, len - seq.len())));
            mask.extend((0..len).map(|i| u32::from(i < seq.len())));
        }
        let device = &Device::Cpu;
        let ids = Tensor::from_vec(ids, (batch.len(), len), device)?;
        let mask = Tensor::from_vec(mask, (batch.len(), len), device)?;
        let types = ids.zeros_like()?;
        let hidden = self.bert.forward(&ids, &types, Some(&mask))?;
        let cls = hidden.narrow(1, 0, 1)?.squeeze(1)?;
        let pooled = self.pooler.forward(&cls)?.tanh()?;
        Ok(self.head.forward(&pooled)?)
    }

    /// Class probabilities for pre-tokenized inputs.
    pub fn probabilities(&self, batch: &[Vec<u32>]) -> Result<Vec<[f64; 3]>, ClassifierError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let logits = self.logits(batch)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        Ok(logits
            .into_iter()
            .map(|row| super::baseline::softmax([row[0], row[1], row[2]]))
            .collect())
    }
}

fn sorted_vars(varmap: &VarMap) -> Vec<(String, Var)> {
    let mut vars: Vec<(String, Var)> = varmap
        .data()
        .lock()
        .unwrap()
        .iter()
        .map(|(n, v)| (n.clone(), v.clone()))
        .collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    vars
}

/// Seeded initialization: layer norms at (1, 0), biases at 0, everything else
/// drawn from N(0, range²) in name order.
fn init_parameters(varmap: &VarMap, range: f64, seed: u64) -> Result<(), ClassifierError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, range as f32).map_err(|e| ClassifierError::Config(e.to_string()))?;
    for (name, var) in sorted_vars(varmap) {
        let shape = var.shape().clone();
        let t = if name.contains("LayerNorm") && name.ends_with(".weight") {
            Tensor::ones(&shape, DType::F32, &Device::Cpu)?
        } else if name.ends_with(".bias") {
            Tensor::zeros(&shape, DType::F32, &Device::Cpu)?
        } else {
            let values: Vec<f32> = (0..shape.elem_count()).map(|_| normal.sample(&mut rng)).collect();
            Tensor::from_vec(values, &shape, &Device::Cpu)?
        };
        var.set(&t)?;
    }
    Ok(())
}

fn load_pretrained(varmap: &VarMap, pretrained: HashMap<String, Tensor>) -> Result<(), ClassifierError> {
    let pretrained: HashMap<String, Tensor> = pretrained
        .into_iter()
        .map(|(n, t)| (canonical_name(&n), t))
        .collect();
    let mut missing = Vec::new();
    for (name, var) in sorted_vars(varmap) {
        match pretrained.get(&name) {
            Some(t) => {
                let t = t.to_dtype(DType::F32)?;
                if t.shape() != var.shape() {
                    return Err(ClassifierError::Config(format!(
                        "checkpoint tensor {name} has shape {:?}, expected {:?}",
                        t.shape(),
                        var.shape()
                    )));
                }
                var.set(&t)?;
            }
            // the classification head is always trained from scratch
            None if name.starts_with("classifier.") || name.starts_with("pooler.") => {}
            None => missing.push(name),
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ClassifierError::Config(format!(
            "checkpoint lacks {} encoder tensors (first: {})",
            missing.len(),
            missing[0]
        )))
    }
}

pub(crate) struct EncoderTrainer {
    model: EncoderClassifier,
    optimizer: AdamW,
    batch_size: usize,
    seed: u64,
    train: Vec<(Vec<u32>, Label)>,
    val: Vec<(Vec<u32>, Label)>,
}

impl EncoderTrainer {
    pub fn new(
        model: EncoderClassifier,
        train: &[(&str, Label)],
        validation: &[(&str, Label)],
        learning_rate: f64,
        weight_decay: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self, ClassifierError> {
        let encode = |items: &[(&str, Label)]| {
            items
                .iter()
                .map(|(t, l)| Ok((model.tokenize(t)?, *l)))
                .collect::<Result<Vec<_>, ClassifierError>>()
        };
        let train = encode(train)?;
        let val = encode(validation)?;
        let optimizer = AdamW::new(
            model.varmap.all_vars(),
            ParamsAdamW {
                lr: learning_rate,
                weight_decay,
                ..Default::default()
            },
        )?;
        Ok(EncoderTrainer {
            model,
            optimizer,
            batch_size,
            seed,
            train,
            val,
        })
    }

    pub fn into_model(self) -> EncoderClassifier {
        self.model
    }
}

impl EpochTrainer for EncoderTrainer {
    type Snapshot = Vec<(String, Tensor)>;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64, ClassifierError> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.batch_size) {
            let seqs: Vec<Vec<u32>> = chunk.iter().map(|&i| self.train[i].0.clone()).collect();
            let targets: Vec<u32> = chunk.iter().map(|&i| self.train[i].1.index() as u32).collect();
            let targets = Tensor::from_vec(targets, chunk.len(), &Device::Cpu)?;
            let logits = self.model.logits(&seqs)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &targets)?;
            self.optimizer.backward_step(&loss)?;
            total += loss.to_scalar::<f32>()? as f64 * chunk.len() as f64;
        }
        Ok(total / self.train.len() as f64)
    }

    fn validate(&self) -> Result<ValidationScore, ClassifierError> {
        let mut preds = Vec::with_capacity(self.val.len());
        let mut golds = Vec::with_capacity(self.val.len());
        for chunk in self.val.chunks(self.batch_size.max(32)) {
            let seqs: Vec<Vec<u32>> = chunk.iter().map(|(s, _)| s.clone()).collect();
            for p in self.model.probabilities(&seqs)? {
                preds.push(argmax(&p));
            }
            golds.extend(chunk.iter().map(|(_, l)| *l));
        }
        let m = metrics(&confusion(&golds, &preds)?)?;
        Ok(ValidationScore {
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
        })
    }

    fn snapshot(&self) -> Result<Self::Snapshot, ClassifierError> {
        sorted_vars(&self.model.varmap)
            .into_iter()
            .map(|(n, v)| Ok((n, v.as_tensor().copy()?)))
            .collect()
    }

    fn restore(&mut self, snapshot: Self::Snapshot) -> Result<(), ClassifierError> {
        let vars = self.model.varmap.data().lock().unwrap().clone();
        for (name, t) in snapshot {
            if let Some(v) = vars.get(&name) {
                v.set(&t)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_names() {
        assert_eq!(canonical_name("bert.embeddings.LayerNorm.gamma"), "embeddings.LayerNorm.weight");
        assert_eq!(canonical_name("bert.encoder.layer.0.output.LayerNorm.beta"), "encoder.layer.0.output.LayerNorm.bias");
        assert_eq!(canonical_name("embeddings.word_embeddings.weight"), "embeddings.word_embeddings.weight");
    }

    #[test]
    fn missing_checkpoint_is_named() {
        let p = DefaultProvider::new("/nonexistent-model-root");
        match p.load("allenai/scibert_scivocab_uncased") {
            Err(ClassifierError::CheckpointUnavailable { name, .. }) => {
                assert_eq!(name, "allenai/scibert_scivocab_uncased")
            }
            Err(other) => panic!("unexpected {other:?}"),
            Ok(_) => panic!("checkpoint should be unavailable"),
        }
    }

    #[test]
    fn seeded_init_is_reproducible_and_round_trips() {
        let p = DefaultProvider::new("unused");
        let a = EncoderClassifier::build(p.load("stub:tiny").unwrap(), 32, 9).unwrap();
        let b = EncoderClassifier::build(p.load("stub:tiny").unwrap(), 32, 9).unwrap();
        let bytes = a.weights_bytes().unwrap();
        assert_eq!(bytes, b.weights_bytes().unwrap());
        let seq = vec![a.tokenize("data will be shared").unwrap()];
        let pa = a.probabilities(&seq).unwrap();
        let restored = EncoderClassifier::from_parts(
            a.bert_config().to_string(),
            a.tokenizer().vocab().to_vec(),
            true,
            32,
            &bytes,
        )
        .unwrap();
        assert_eq!(restored.probabilities(&seq).unwrap(), pa);
        let s: f64 = pa[0].iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn loads_directory_checkpoint() {
        // write a stub encoder out as a checkpoint directory and load it back
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let ckpt = root.join("local").join("tiny");
        std::fs::create_dir_all(&ckpt).unwrap();
        let stub = EncoderClassifier::build(DefaultProvider::new(root).load("stub:x").unwrap(), 16, 3).unwrap();
        std::fs::write(ckpt.join("config.json"), stub.bert_config()).unwrap();
        std::fs::write(ckpt.join("vocab.txt"), stub.tokenizer().vocab().join("\n")).unwrap();
        // rename to the HF layout to exercise the name mapping
        let tensors = candle_core::safetensors::load_buffer(&stub.weights_bytes().unwrap(), &Device::Cpu).unwrap();
        let renamed: HashMap<String, Tensor> = tensors
            .into_iter()
            .filter(|(n, _)| !n.starts_with("classifier."))
            .map(|(n, t)| {
                let n = n.replace("LayerNorm.weight", "LayerNorm.gamma").replace("LayerNorm.bias", "LayerNorm.beta");
                (format!("bert.{n}"), t)
            })
            .collect();
        candle_core::safetensors::save(&renamed, ckpt.join("model.safetensors")).unwrap();

        let loaded = EncoderClassifier::build(DefaultProvider::new(root).load("local/tiny").unwrap(), 16, 77).unwrap();
        let seq = vec![stub.tokenize("participant data available").unwrap()];
        // same encoder weights; only the freshly initialized head differs
        let a = stub.bert.forward(&Tensor::new(&seq[..1].iter().flatten().copied().collect::<Vec<u32>>()[..], &Device::Cpu).unwrap().unsqueeze(0).unwrap(), &Tensor::zeros((1, seq[0].len()), DType::U32, &Device::Cpu).unwrap(), None).unwrap();
        let b = loaded.bert.forward(&Tensor::new(&seq[0][..], &Device::Cpu).unwrap().unsqueeze(0).unwrap(), &Tensor::zeros((1, seq[0].len()), DType::U32, &Device::Cpu).unwrap(), None).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-6);
    }
}
