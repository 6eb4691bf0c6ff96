//! Word embedding tables and label-name embeddings.

use super::{LabelSet, Sentence, Vocab};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::PathBuf;

/// Default standard deviation of the Gaussian initialisation.
pub const INIT_STD: f64 = 0.02;

/// Where word vectors come from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum EmbeddingBackend {
    /// Gaussian-initialised, updated by training.
    #[default]
    Trainable,
    /// Frozen vectors from a plain-text `V d` / `token v1 .. vd` file.
    File(PathBuf),
}

/// `|vocab| × d` embedding matrix held in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub param: ParamId,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn gaussian<S: Scalar, R: Rng>(store: &mut ParamStore<S>, vocab: &Vocab, dim: usize, std: f64, rng: &mut R) -> Self {
        let param = store.add_normal("embedding", &[vocab.size(), dim], std, rng);
        Self { param, dim }
    }

    /// Frozen table from a vector file. Vocabulary rows absent from the file keep a
    /// Gaussian initialisation.
    pub fn from_reader<S: Scalar, B: BufRead, R: Rng>(
        store: &mut ParamStore<S>,
        vocab: &Vocab,
        reader: B,
        rng: &mut R,
    ) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("embedding file is empty".into()))??;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Data(format!("embedding header {header:?}: expected \"V d\"")))
        };
        let count = parse_usize(parts.next())?;
        let dim = parse_usize(parts.next())?;
        if dim == 0 {
            return Err(Error::Data("embedding width must be positive".into()));
        }
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let mut table = Tensor::<S>::from_fn(vec![vocab.size(), dim], |_| S::lit(normal.sample(rng)));
        let mut seen = 0;
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default();
            let values: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("embedding line {}: {e}", k + 2)))?;
            if values.len() != dim {
                return Err(Error::Data(format!(
                    "embedding line {}: expected {dim} values, found {}",
                    k + 2,
                    values.len()
                )));
            }
            seen += 1;
            if let Some(id) = vocab.get(token) {
                let row = &mut table.data_mut()[id * dim..(id + 1) * dim];
                for (r, v) in row.iter_mut().zip(values) {
                    *r = S::lit(v);
                }
            }
        }
        if seen != count {
            return Err(Error::Data(format!("embedding header announces {count} vectors, found {seen}")));
        }
        let param = store.add("embedding", table);
        store.set_trainable(param, false);
        Ok(Self { param, dim })
    }

    pub fn lookup<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, ids: &[usize]) -> Result<Var<'t, S>> {
        tape.param(store, self.param).gather_rows(ids)
    }

    /// `n × d` matrix whose row `i` embeds token `i` (UNK row for unknown tokens).
    pub fn embed_tokens<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        vocab: &Vocab,
        sentence: &Sentence,
    ) -> Result<Var<'t, S>> {
        let ids: Vec<usize> = sentence.tokens.iter().map(|t| vocab.id(t)).collect();
        self.lookup(tape, store, &ids)
    }

    pub fn row<'a, S: Scalar>(&self, store: &'a ParamStore<S>, id: usize) -> &'a [S] {
        store.get(self.param).row_slice(id)
    }
}

/// Mean of the embeddings of the words in a label name, as a `1 × d` row.
pub fn label_embedding<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    table: &EmbeddingTable,
    vocab: &Vocab,
    name: &str,
) -> Result<Var<'t, S>> {
    let ids: Vec<usize> = name.split_whitespace().map(|w| vocab.label_word_id(w)).collect();
    if ids.is_empty() {
        return Err(Error::Data(format!("label name {name:?} has no words")));
    }
    table.lookup(tape, store, &ids)?.mean(0)
}

/// `L × d` matrix of label embeddings in label-set order.
pub fn label_embeddings<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    table: &EmbeddingTable,
    vocab: &Vocab,
    labels: &LabelSet,
) -> Result<Var<'t, S>> {
    let rows = labels
        .names()
        .iter()
        .map(|n| label_embedding(tape, store, table, vocab, n))
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&rows, 0)
}
