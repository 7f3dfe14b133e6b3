//! Word vocabulary over feature names and value texts, plus the reserved
//! block of magnitude-token ids shared by every numerical feature.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
const N_SPECIAL: u32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("vocabulary corpus is empty")]
    EmptyCorpus,
    #[error("magnitude index {k} outside 0..={max}")]
    OutOfRange { k: usize, max: usize },
    #[error("n_bin must be at least 1")]
    InvalidBins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Word,
    Magnitude,
    Cls,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub kinds: Vec<TokenKind>,
}

impl TokenSequence {
    pub fn words(ids: Vec<u32>) -> Self {
        let kinds = vec![TokenKind::Word; ids.len()];
        TokenSequence { ids, kinds }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lowercase alphanumeric runs; everything else separates words.
pub fn normalize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Serialized form: `{"words":[...],"n_bin":...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabFile {
    pub words: Vec<String>,
    pub n_bin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    word_to_id: HashMap<String, u32>,
    n_bin: usize,
}

impl Vocabulary {
    /// Keeps the `max_words` most frequent words (ties lexicographic) and
    /// reserves `n_bin + 1` magnitude ids after them.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_words: usize, n_bin: usize) -> Result<Self, VocabError> {
        if corpus.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for w in normalize(text.as_ref()) {
                *freq.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_words);
        Self::from_words(ranked.into_iter().map(|(w, _)| w).collect(), n_bin)
    }

    pub fn from_words(words: Vec<String>, n_bin: usize) -> Result<Self, VocabError> {
        if n_bin == 0 {
            return Err(VocabError::InvalidBins);
        }
        let word_to_id = words.iter().enumerate().map(|(i, w)| (w.clone(), N_SPECIAL + i as u32)).collect();
        Ok(Vocabulary { words, word_to_id, n_bin })
    }

    pub fn from_file(file: VocabFile) -> Result<Self, VocabError> {
        Self::from_words(file.words, file.n_bin)
    }

    pub fn to_file(&self) -> VocabFile {
        VocabFile { words: self.words.clone(), n_bin: self.n_bin }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn n_bin(&self) -> usize {
        self.n_bin
    }

    /// Number of ids below the magnitude block (specials + words).
    pub fn n_word_ids(&self) -> usize {
        N_SPECIAL as usize + self.words.len()
    }

    pub fn magnitude_base(&self) -> u32 {
        self.n_word_ids() as u32
    }

    pub fn missing_id(&self) -> u32 {
        self.magnitude_base() + self.n_bin as u32
    }

    pub fn size(&self) -> usize {
        self.n_word_ids() + self.n_bin + 1
    }

    pub fn is_magnitude(&self, id: u32) -> bool {
        id >= self.magnitude_base() && (id as usize) < self.size()
    }

    pub fn word_id(&self, word: &str) -> u32 {
        self.word_to_id.get(word).copied().unwrap_or(UNK)
    }

    pub fn encode_text(&self, text: &str) -> TokenSequence {
        let ids: Vec<u32> = normalize(text).iter().map(|w| self.word_id(w)).collect();
        if ids.is_empty() {
            return TokenSequence::words(vec![UNK]);
        }
        TokenSequence::words(ids)
    }

    /// Id of magnitude bin `k`; `k == n_bin` is the missing-value token.
    pub fn magnitude_token_id(&self, k: usize) -> Result<u32, VocabError> {
        if k > self.n_bin {
            return Err(VocabError::OutOfRange { k, max: self.n_bin });
        }
        Ok(self.magnitude_base() + k as u32)
    }
}
