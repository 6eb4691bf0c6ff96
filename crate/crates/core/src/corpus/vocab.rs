use super::Document;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Number of hash buckets reserved for out-of-vocabulary label words.
pub const LABEL_BUCKETS: usize = 64;

pub const UNK: usize = 0;

/// Token ids: `0` is UNK, `1..=LABEL_BUCKETS` are label-word buckets, then corpus tokens
/// by descending frequency with lexicographic tie-break.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn build(corpus: &[Document], min_count: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in corpus.iter().flat_map(|d| d.tokens()) {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect()))
    }

    /// Vocabulary over an explicit token list (ids follow list order after the special ids).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut v = Self {
            tokens,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + Self::first_token_id()))
            .collect();
    }

    pub const fn first_token_id() -> usize {
        1 + LABEL_BUCKETS
    }

    /// Total rows an embedding table needs, special ids included.
    pub fn size(&self) -> usize {
        Self::first_token_id() + self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(Self::first_token_id())
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    /// Id for a label-name word: its own id when known, otherwise a stable hash bucket.
    pub fn label_word_id(&self, word: &str) -> usize {
        self.get(word).unwrap_or_else(|| 1 + (fnv1a(word.as_bytes()) % LABEL_BUCKETS as u64) as usize)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}
