use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Corpus;

/// Index shared by unknown words and out-of-sentence padding.
pub const UNK: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub min_count: usize,
}

impl Vocab {
    fn from_words(words: Vec<String>, min_count: usize) -> Vocab {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index, min_count }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(mut self) -> Vocab {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t.as_ref())).collect()
    }

    /// SHA-256 over the ordered word list, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update([0u8]);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Words seen at least `min_count` times get indices `1..`, ordered by
/// frequency (descending) then lexicographically.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Vocab {
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for token in corpus.sentences.iter().flat_map(|s| &s.tokens) {
        *counts.entry(token.as_str()).or_insert(0) += 1;
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut words = Vec::with_capacity(kept.len() + 1);
    words.push(UNK_TOKEN.to_string());
    words.extend(kept.into_iter().map(|(w, _)| w.to_string()));
    Vocab::from_words(words, min_count)
}
