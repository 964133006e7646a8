//! Bag-of-words baseline: TF-IDF over word n-grams feeding a multinomial
//! logistic regression trained by full-batch gradient descent.
//!
//! Feature vectors are L2-normalized and the bias sees a constant input of 1,
//! so the gradient of the mean cross-entropy is Lipschitz with constant at
//! most `1 + l2`. Any learning rate below `2 / (1 + l2)` therefore gives a
//! monotonically non-increasing objective.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::eval_report::{confusion, metrics};
use crate::label::Label;

use super::config::BaselineOptions;
use super::early_stopping::{EpochTrainer, ValidationScore};
use super::{argmax, ClassifierError};

type SparseVec = Vec<(u32, f64)>;

/// Lowercased alphanumeric word tokens, truncated to `max_tokens`.
pub fn word_tokens(text: &str, max_tokens: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(max_tokens)
        .map(str::to_lowercase)
        .collect()
}

fn ngrams(tokens: &[String], n_max: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() * n_max);
    for n in 1..=n_max {
        for w in tokens.windows(n) {
            out.push(w.join(" "));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VectorizerData {
    terms: Vec<String>,
    idf: Vec<f64>,
    ngram_max: usize,
    max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VectorizerData", into = "VectorizerData")]
pub struct TfidfVectorizer {
    terms: Vec<String>,
    idf: Vec<f64>,
    ngram_max: usize,
    max_tokens: usize,
    index: HashMap<String, u32>,
}

impl From<VectorizerData> for TfidfVectorizer {
    fn from(d: VectorizerData) -> Self {
        let index = d
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        TfidfVectorizer {
            terms: d.terms,
            idf: d.idf,
            ngram_max: d.ngram_max,
            max_tokens: d.max_tokens,
            index,
        }
    }
}

impl From<TfidfVectorizer> for VectorizerData {
    fn from(v: TfidfVectorizer) -> Self {
        VectorizerData {
            terms: v.terms,
            idf: v.idf,
            ngram_max: v.ngram_max,
            max_tokens: v.max_tokens,
        }
    }
}

impl TfidfVectorizer {
    /// Smoothed idf: `ln((1 + n) / (1 + df)) + 1`.
    pub fn fit<'a, I>(docs: I, ngram_max: usize, min_df: usize, max_tokens: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in docs {
            n_docs += 1;
            let mut grams = ngrams(&word_tokens(doc, max_tokens), ngram_max);
            grams.sort();
            grams.dedup();
            for g in grams {
                *df.entry(g).or_default() += 1;
            }
        }
        let (terms, idf): (Vec<String>, Vec<f64>) = df
            .into_iter()
            .filter(|(_, d)| *d >= min_df)
            .map(|(t, d)| (t, ((1 + n_docs) as f64 / (1 + d) as f64).ln() + 1.0))
            .unzip();
        VectorizerData {
            terms,
            idf,
            ngram_max,
            max_tokens,
        }
        .into()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    /// L2-normalized TF-IDF vector, sorted by feature index.
    pub fn transform(&self, text: &str) -> SparseVec {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for g in ngrams(&word_tokens(text, self.max_tokens), self.ngram_max) {
            if let Some(&j) = self.index.get(&g) {
                *tf.entry(j).or_default() += 1.0;
            }
        }
        let mut v: SparseVec = tf
            .into_iter()
            .map(|(j, c)| (j, c * self.idf[j as usize]))
            .collect();
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, x) in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

/// Trained baseline parameters. Portable: plain JSON numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub vectorizer: TfidfVectorizer,
    /// Feature-major: `weights[j * 3 + k]` is feature `j`'s weight for label `k`.
    pub weights: Vec<f64>,
    pub bias: [f64; 3],
}

impl BaselineModel {
    fn zeros(vectorizer: TfidfVectorizer) -> Self {
        let n = vectorizer.vocabulary_size() * 3;
        BaselineModel {
            vectorizer,
            weights: vec![0.0; n],
            bias: [0.0; 3],
        }
    }

    fn logits(&self, x: &[(u32, f64)]) -> [f64; 3] {
        let mut z = self.bias;
        for &(j, v) in x {
            let w = &self.weights[j as usize * 3..j as usize * 3 + 3];
            for k in 0..3 {
                z[k] += v * w[k];
            }
        }
        z
    }

    pub fn probabilities(&self, text: &str) -> [f64; 3] {
        softmax(self.logits(&self.vectorizer.transform(text)))
    }
}

pub(crate) fn softmax(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

pub(crate) struct BaselineTrainer {
    model: BaselineModel,
    options: BaselineOptions,
    learning_rate: f64,
    train_x: Vec<SparseVec>,
    train_y: Vec<Label>,
    val_x: Vec<SparseVec>,
    val_y: Vec<Label>,
}

impl BaselineTrainer {
    pub fn new(
        train: &[(&str, Label)],
        validation: &[(&str, Label)],
        options: BaselineOptions,
        learning_rate: f64,
        max_tokens: usize,
    ) -> Self {
        let vectorizer = TfidfVectorizer::fit(
            train.iter().map(|(t, _)| *t),
            options.ngram_max,
            options.min_df,
            max_tokens,
        );
        let train_x = train.iter().map(|(t, _)| vectorizer.transform(t)).collect();
        let val_x = validation.iter().map(|(t, _)| vectorizer.transform(t)).collect();
        BaselineTrainer {
            model: BaselineModel::zeros(vectorizer),
            options,
            learning_rate,
            train_x,
            train_y: train.iter().map(|(_, l)| *l).collect(),
            val_x,
            val_y: validation.iter().map(|(_, l)| *l).collect(),
        }
    }

    pub fn into_model(self) -> BaselineModel {
        self.model
    }

    /// Mean cross-entropy plus the L2 penalty.
    pub fn objective(&self) -> f64 {
        let n = self.train_x.len() as f64;
        let ce: f64 = self
            .train_x
            .iter()
            .zip(&self.train_y)
            .map(|(x, y)| {
                let z = self.model.logits(x);
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - z[y.index()]
            })
            .sum();
        let reg: f64 = self.model.weights.iter().map(|w| w * w).sum();
        ce / n + 0.5 * self.options.l2 * reg
    }

    fn gradient_step(&mut self) {
        let n = self.train_x.len() as f64;
        let mut gw = vec![0.0; self.model.weights.len()];
        let mut gb = [0.0; 3];
        for (x, y) in self.train_x.iter().zip(&self.train_y) {
            let mut g = softmax(self.model.logits(x));
            g[y.index()] -= 1.0;
            for &(j, v) in x {
                let base = j as usize * 3;
                for k in 0..3 {
                    gw[base + k] += v * g[k];
                }
            }
            for k in 0..3 {
                gb[k] += g[k];
            }
        }
        let lr = self.learning_rate;
        let l2 = self.options.l2;
        for (w, g) in self.model.weights.iter_mut().zip(&gw) {
            *w -= lr * (g / n + l2 * *w);
        }
        for k in 0..3 {
            self.model.bias[k] -= lr * gb[k] / n;
        }
    }
}

impl EpochTrainer for BaselineTrainer {
    type Snapshot = (Vec<f64>, [f64; 3]);

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64, ClassifierError> {
        for _ in 0..self.options.steps_per_epoch {
            self.gradient_step();
        }
        Ok(self.objective())
    }

    fn validate(&self) -> Result<ValidationScore, ClassifierError> {
        let preds: Vec<Label> = self
            .val_x
            .iter()
            .map(|x| argmax(&softmax(self.model.logits(x))))
            .collect();
        let m = metrics(&confusion(&self.val_y, &preds)?)?;
        Ok(ValidationScore {
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
        })
    }

    fn snapshot(&self) -> Result<Self::Snapshot, ClassifierError> {
        Ok((self.model.weights.clone(), self.model.bias))
    }

    fn restore(&mut self, (weights, bias): Self::Snapshot) -> Result<(), ClassifierError> {
        self.model.weights = weights;
        self.model.bias = bias;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_ngrams() {
        let t = word_tokens("Data will be SHARED, on-request.", 128);
        assert_eq!(t, ["data", "will", "be", "shared", "on", "request"]);
        assert_eq!(word_tokens("a b c d", 2), ["a", "b"]);
        let g = ngrams(&t[..3], 2);
        assert_eq!(g, ["data", "will", "be", "data will", "will be"]);
    }

    #[test]
    fn idf_matches_hand_computation() {
        let v = TfidfVectorizer::fit(["alpha beta", "alpha gamma"], 1, 1, 128);
        // n = 2; df(alpha) = 2 -> ln(3/3)+1 = 1; df(beta) = 1 -> ln(3/2)+1
        let i = |t: &str| v.index[t] as usize;
        assert!((v.idf[i("alpha")] - 1.0).abs() < 1e-15);
        assert!((v.idf[i("beta")] - (1.5f64.ln() + 1.0)).abs() < 1e-15);
        let x = v.transform("alpha beta");
        let norm: f64 = x.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(v.transform("unseen words only").is_empty());
    }

    #[test]
    fn min_df_prunes() {
        let v = TfidfVectorizer::fit(["alpha beta", "alpha gamma"], 2, 2, 128);
        assert_eq!(v.terms, ["alpha"]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let train = [("alpha beta", Label::Yes), ("gamma delta", Label::No), ("beta gamma", Label::Undecided)];
        let mut t = BaselineTrainer::new(&train, &train, BaselineOptions { l2: 0.1, ..Default::default() }, 0.5, 128);
        // move away from the symmetric origin
        for (i, w) in t.model.weights.iter_mut().enumerate() {
            *w = ((i * 7 % 11) as f64 - 5.0) / 10.0;
        }
        t.model.bias = [0.1, -0.2, 0.05];
        let before = t.model.weights.clone();
        let f0 = t.objective();
        t.gradient_step();
        // recover the analytic gradient from the update: g = (w_old - w_new) / lr
        let analytic: Vec<f64> = before.iter().zip(&t.model.weights).map(|(a, b)| (a - b) / 0.5).collect();
        t.model.weights = before.clone();
        t.model.bias = [0.1, -0.2, 0.05];
        assert!((t.objective() - f0).abs() < 1e-15);
        let h = 1e-6;
        for j in 0..before.len() {
            t.model.weights[j] = before[j] + h;
            let up = t.objective();
            t.model.weights[j] = before[j] - h;
            let down = t.objective();
            t.model.weights[j] = before[j];
            let numeric = (up - down) / (2.0 * h);
            assert!((numeric - analytic[j]).abs() < 1e-6, "feature {j}: {numeric} vs {}", analytic[j]);
        }
    }
}
