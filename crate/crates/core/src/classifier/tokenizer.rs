//! BERT-style WordPiece tokenization: basic pre-tokenization (optional
//! lowercasing and accent stripping, punctuation splitting) followed by
//! greedy longest-match-first subword lookup.

use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use super::ClassifierError;

const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    lowercase: bool,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl WordPieceTokenizer {
    pub fn new(tokens: Vec<String>, lowercase: bool) -> Result<Self, ClassifierError> {
        let index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let special = |name: &str| {
            index.get(name).copied().ok_or_else(|| {
                ClassifierError::VocabularyUnavailable(format!("vocabulary lacks {name}"))
            })
        };
        Ok(WordPieceTokenizer {
            pad: special("[PAD]")?,
            unk: special("[UNK]")?,
            cls: special("[CLS]")?,
            sep: special("[SEP]")?,
            tokens,
            index,
            lowercase,
        })
    }

    /// Reads a `vocab.txt` (one token per line, id = line number).
    pub fn from_vocab_file(path: &Path, lowercase: bool) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ClassifierError::VocabularyUnavailable(format!("{}: {e}", path.display()))
        })?;
        let tokens = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        Self::new(tokens, lowercase)
    }

    pub fn vocab(&self) -> &[String] {
        &self.tokens
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    /// `[CLS] pieces… [SEP]`, keeping the prefix when longer than `max_tokens`.
    pub fn encode(&self, text: &str, max_tokens: usize) -> Result<Vec<u32>, ClassifierError> {
        if text.trim().is_empty() {
            return Err(ClassifierError::EmptyText);
        }
        if max_tokens < 2 {
            return Err(ClassifierError::Config(
                "max_sequence_tokens must leave room for [CLS] and [SEP]".into(),
            ));
        }
        let budget = max_tokens - 2;
        let mut ids = Vec::with_capacity(max_tokens.min(64));
        ids.push(self.cls);
        'words: for word in self.basic_tokens(text) {
            for piece in self.word_pieces(&word) {
                if ids.len() - 1 == budget {
                    break 'words;
                }
                ids.push(piece);
            }
        }
        ids.push(self.sep);
        Ok(ids)
    }

    fn basic_tokens(&self, text: &str) -> Vec<String> {
        let mut cleaned = String::with_capacity(text.len());
        for c in text.chars() {
            if c == '\0' || c == '\u{fffd}' || (c.is_control() && !c.is_whitespace()) {
                continue;
            }
            if is_cjk(c) {
                cleaned.push(' ');
                cleaned.push(c);
                cleaned.push(' ');
            } else {
                cleaned.push(c);
            }
        }
        let mut out = Vec::new();
        for word in cleaned.split_whitespace() {
            let word: String = if self.lowercase {
                word.to_lowercase()
                    .nfd()
                    .filter(|c| !is_combining_mark(*c))
                    .collect()
            } else {
                word.to_string()
            };
            let mut current = String::new();
            for c in word.chars() {
                if is_punctuation(c) {
                    if !current.is_empty() {
                        out.push(std::mem::take(&mut current));
                    }
                    out.push(c.to_string());
                } else {
                    current.push(c);
                }
            }
            if !current.is_empty() {
                out.push(current);
            }
        }
        out
    }

    fn word_pieces(&self, word: &str) -> Vec<u32> {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            return vec![self.unk];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut sub: String = chars[start..end].iter().collect();
                if start > 0 {
                    sub.insert_str(0, "##");
                }
                if let Some(&id) = self.index.get(&sub) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![self.unk],
            }
        }
        pieces
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !is_combining_mark(c))
}

fn is_combining_mark(c: char) -> bool {
    matches!(c as u32, 0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

const STUB_WORDS: &str = "
the of and to a in for is on that by this with be as are at from or an will
it not no yes data ipd individual participant participants patient patients
share shared sharing available availability make made making plan plans
planned plan to other researchers researcher research investigators investigator
study studies trial trials clinical results result publication published
after before during completion end months years year within upon following
request requests requested reasonable proposal proposals access accessible
de identified deidentified anonymized anonymised personal information privacy
consent ethics ethical committee approval approved board review reviewed
undecided decided decision yet determined unknown unclear whether if may might
could would should can cannot currently pending time point future
there there's has have had been does do did any all some primary secondary
outcome outcomes measures measure analysis analyses protocol statistical
code dictionary documents supporting information sap icf csr
via through repository platform website contact corresponding author
sponsor sponsors company university institution hospital agreement agreements
use used reuse purpose purposes only non commercial academic scientific
intent intend intends intention we our us they their them you your
confidential confidentiality protect protected regulations law laws legal
local national gdpr hipaa policy policies
";

/// A small built-in vocabulary for randomly initialized test encoders:
/// special tokens, common statement words and a character fallback.
pub fn stub_vocabulary() -> Vec<String> {
    let mut v: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .into_iter()
        .map(String::from)
        .collect();
    let mut push = |t: String| {
        if !v.contains(&t) {
            v.push(t);
        }
    };
    for w in STUB_WORDS.split_whitespace() {
        push(w.to_string());
    }
    for c in ('a'..='z').chain('0'..='9') {
        push(c.to_string());
        push(format!("##{c}"));
    }
    for c in "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~".chars() {
        push(c.to_string());
    }
    v
}
