//! The full document classifier and its losses.

use crate::config::{Channel, Task, TrainConfig};
use crate::corpus::{Document, EmbeddingBackend, EmbeddingTable, LabelSet, Vocab};
use crate::error::{Error, Result};
use crate::graph::{DocEncoderParams, FfnParams, GATParams};
use crate::params::{ParamId, ParamStore};
use crate::propagation::{iterate_updates, DownwardParams, Encoded, UpwardParams};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;
use crate::tree::TreeTransformerParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::BufReader;

pub const PROB_FLOOR: f64 = 1e-12;

/// Multilabel decision threshold.
pub const MULTILABEL_THRESHOLD: f64 = 0.5;

/// `tanh(dense)` followed by the output affine map.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub dense_w: ParamId,
    pub dense_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl HeadParams {
    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.dense_w, self.dense_b, self.out_w, self.out_b]
    }
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub embedding: EmbeddingTable,
    pub upward: UpwardParams,
    pub downward: DownwardParams,
    pub head: HeadParams,
}

/// Class probabilities (`1 × L`) from a document vector.
pub fn classify<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    head: &HeadParams,
    h: Var<'t, S>,
    task: Task,
) -> Result<Var<'t, S>> {
    let p = |id| tape.param(store, id);
    let logits = h
        .affine(&p(head.dense_w), &p(head.dense_b))?
        .tanh()?
        .affine(&p(head.out_w), &p(head.out_b))?;
    probabilities(logits, task)
}

pub fn probabilities<'t, S: Scalar>(logits: Var<'t, S>, task: Task) -> Result<Var<'t, S>> {
    match task {
        Task::Multilabel => logits.sigmoid(),
        Task::Binary | Task::Multiclass => logits.softmax(1),
    }
}

/// Cross-entropy for single-label tasks, mean binary cross-entropy for multilabel,
/// on probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn loss<'t, S: Scalar>(probs: Var<'t, S>, gold: &[usize], task: Task) -> Result<Var<'t, S>> {
    let tape = probs.tape();
    let l = probs.shape()[1];
    if let Some(&bad) = gold.iter().find(|&&g| g >= l) {
        return Err(Error::Data(format!("gold label {bad} out of range for {l} labels")));
    }
    let (lo, hi) = (S::lit(PROB_FLOOR), S::lit(1.0 - PROB_FLOOR));
    let mut target = Tensor::zeros(vec![1, l]);
    for &g in gold {
        target.data_mut()[g] = S::one();
    }
    match task {
        Task::Binary | Task::Multiclass => {
            if gold.len() != 1 {
                return Err(Error::Data(format!("single-label task needs one gold label, found {}", gold.len())));
            }
            probs.ln_clamped(lo, hi)?.mul(&tape.constant(target))?.sum_all()?.scale(-S::one())
        }
        Task::Multilabel => {
            let complement = tape.constant(Tensor::ones(vec![1, l])).sub(&probs)?;
            let neg = tape.constant(target.map(|y| S::one() - y));
            probs
                .ln_clamped(lo, hi)?
                .mul(&tape.constant(target))?
                .add(&complement.ln_clamped(lo, hi)?.mul(&neg)?)?
                .sum_all()?
                .scale(-S::one() / S::lit(l as f64))
        }
    }
}

/// Mean over sentences of `-ln Σ_{y ∈ gold} score(s, y)`: pulls every sentence's
/// label-wise distribution towards the document's gold labels.
pub fn label_alignment<'t, S: Scalar>(scores: Var<'t, S>, gold: &[usize]) -> Result<Option<Var<'t, S>>> {
    if gold.is_empty() {
        return Ok(None);
    }
    let l = scores.shape()[1];
    let mut mask = Tensor::zeros(vec![1, l]);
    for &g in gold {
        mask.data_mut()[g] = S::one();
    }
    let mass = scores.mul(&scores.tape().constant(mask))?.sum(1)?;
    let nll = mass
        .ln_clamped(S::lit(PROB_FLOOR), S::one())?
        .mean(0)?
        .scale(-S::one())?;
    Ok(Some(nll))
}

pub struct Forward<'t, S> {
    pub encoded: Encoded<'t, S>,
    pub probs: Var<'t, S>,
}

pub struct Objective<'t, S> {
    pub total: Var<'t, S>,
    pub task_loss: Var<'t, S>,
    pub alignment: Option<Var<'t, S>>,
}

/// Trained or freshly initialised classifier with its vocabulary and label set.
pub struct GraphTreeModel<S: Scalar> {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub labels: LabelSet,
    pub store: ParamStore<S>,
    pub params: ModelParams,
}

impl<S: Scalar> GraphTreeModel<S> {
    /// Initialises every parameter from `config.seed`. A file embedding backend is read here.
    pub fn new(config: TrainConfig, vocab: Vocab, labels: LabelSet) -> Result<Self> {
        Self::build(config, vocab, labels, true)
    }

    /// Same parameter layout as [`GraphTreeModel::new`]; with `read_embeddings` off a
    /// file backend is replaced by a placeholder table of the configured width.
    pub(crate) fn build(config: TrainConfig, vocab: Vocab, labels: LabelSet, read_embeddings: bool) -> Result<Self> {
        config.validate()?;
        if config.task == Task::Binary && labels.len() != 2 {
            return Err(Error::Config(format!("binary task needs exactly 2 labels, found {}", labels.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d;
        let embedding = match (&config.embedding, read_embeddings) {
            (EmbeddingBackend::File(path), true) => {
                let f = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
                let table = EmbeddingTable::from_reader(&mut store, &vocab, BufReader::new(f), &mut rng)?;
                if table.dim != d {
                    return Err(Error::Config(format!("embedding file width {} differs from d = {d}", table.dim)));
                }
                table
            }
            (EmbeddingBackend::File(_), false) => {
                let t = EmbeddingTable::gaussian(&mut store, &vocab, d, config.embedding_std, &mut rng);
                store.set_trainable(t.param, false);
                t
            }
            (EmbeddingBackend::Trainable, _) => EmbeddingTable::gaussian(&mut store, &vocab, d, config.embedding_std, &mut rng),
        };
        let channels = config.ablation.channels();
        let dtt = channels
            .contains(&Channel::Dep)
            .then(|| TreeTransformerParams::new(&mut store, "dtt", d, config.branches, &mut rng))
            .transpose()?;
        let ctt = channels
            .contains(&Channel::Const)
            .then(|| TreeTransformerParams::new(&mut store, "ctt", d, config.branches, &mut rng))
            .transpose()?;
        let inner = config.ffn_mult * d;
        let doc = DocEncoderParams {
            gat: GATParams::new(&mut store, "doc.gat", d, config.gat_heads, config.gat_combine, &mut rng)?,
            ffn: FfnParams::new(&mut store, "doc.ffn", d, inner, &mut rng),
        };
        let downward = DownwardParams::new(&mut store, &channels, d, config.gat_heads, config.gat_combine, inner, &mut rng)?;
        let l = labels.len();
        let head = HeadParams {
            dense_w: store.add_glorot("head.dense_w", d, d, &mut rng),
            dense_b: store.add_const("head.dense_b", &[1, d], 0.0),
            out_w: store.add_glorot("head.out_w", d, l, &mut rng),
            out_b: store.add_const("head.out_b", &[1, l], 0.0),
        };
        Ok(Self {
            params: ModelParams {
                embedding,
                upward: UpwardParams { dtt, ctt, doc },
                downward,
                head,
            },
            config,
            vocab,
            labels,
            store,
        })
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.config.ablation.channels()
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn forward<'t>(&self, tape: &'t Tape<S>, doc: &Document) -> Result<Forward<'t, S>> {
        let encoded = iterate_updates(tape, self, doc, self.config.iterations, None)?;
        let probs = classify(tape, &self.store, &self.params.head, encoded.output.h_tilde, self.config.task)?;
        Ok(Forward { encoded, probs })
    }

    pub fn objective<'t>(&self, forward: &Forward<'t, S>, doc: &Document) -> Result<Objective<'t, S>> {
        let gold = self.labels.indices(doc)?;
        let task_loss = loss(forward.probs, &gold, self.config.task)?;
        let alignment = label_alignment(forward.encoded.scores, &gold)?;
        let w = self.config.label_align_weight;
        let total = match alignment {
            Some(a) if w > 0.0 => task_loss.add(&a.scale(S::lit(w))?)?,
            _ => task_loss,
        };
        Ok(Objective {
            total,
            task_loss,
            alignment,
        })
    }

    /// Loss value and parameter gradients for one document.
    pub fn gradients(&self, doc: &Document) -> Result<(S, Gradients<S>)> {
        let tape = Tape::new();
        let fwd = self.forward(&tape, doc)?;
        let obj = self.objective(&fwd, doc)?;
        let value = obj.total.item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss on document {}", doc.id)));
        }
        Ok((value, obj.total.backward()?))
    }

    /// Class probabilities for one document.
    pub fn predict_proba(&self, doc: &Document) -> Result<Vec<S>> {
        let tape = Tape::new();
        Ok(self.forward(&tape, doc)?.probs.value().into_data())
    }

    /// Sentence indices kept by label-wise selection.
    pub fn selected_sentences(&self, doc: &Document) -> Result<Vec<usize>> {
        let tape = Tape::new();
        Ok(crate::propagation::first_pass(&tape, self, doc)?.1.graph.sentences)
    }
}

/// Predicted label indices from a probability vector.
pub fn decide<S: Scalar>(probs: &[S], task: Task) -> Vec<usize> {
    match task {
        Task::Multilabel => (0..probs.len())
            .filter(|&i| probs[i].as_f64() >= MULTILABEL_THRESHOLD)
            .collect(),
        Task::Binary | Task::Multiclass => {
            let mut best = 0;
            for i in 1..probs.len() {
                if probs[i] > probs[best] {
                    best = i;
                }
            }
            vec![best]
        }
    }
}
