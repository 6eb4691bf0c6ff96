//! Label-wise sentence selection, the document graph and GAT document encoding.

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Axis over which label-wise dot products are normalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAxis {
    /// Each sentence gets a distribution over labels.
    #[default]
    PerSentence,
    /// Each label gets a distribution over sentences.
    PerLabel,
}

/// `N × L` label-wise attention scores.
pub fn labelwise_scores<'t, S: Scalar>(
    sentences: Var<'t, S>,
    labels: Var<'t, S>,
    axis: ScoreAxis,
) -> Result<Var<'t, S>> {
    let raw = sentences.matmul(&labels.transpose()?)?;
    match axis {
        ScoreAxis::PerSentence => raw.softmax(1),
        ScoreAxis::PerLabel => raw.softmax(0),
    }
}

/// Row maxima of an `N × L` score matrix.
pub fn max_scores<S: Scalar>(scores: &Tensor<S>) -> Vec<S> {
    (0..scores.rows())
        .map(|r| scores.row_slice(r).iter().copied().fold(S::neg_infinity(), S::max))
        .collect()
}

/// Sentences whose best label score reaches `tau`; falls back to the single best
/// sentence (lowest index on ties) when none does.
pub fn select_sentences<S: Scalar>(scores: &Tensor<S>, tau: f64) -> Result<Vec<usize>> {
    check_tau(tau)?;
    let best = max_scores(scores);
    if best.is_empty() {
        return Err(Error::Data("no sentences to select from".into()));
    }
    let tau = S::lit(tau);
    let picked: Vec<usize> = (0..best.len()).filter(|&i| best[i] >= tau).collect();
    if !picked.is_empty() {
        return Ok(picked);
    }
    let mut top = 0;
    for (i, &v) in best.iter().enumerate() {
        if v > best[top] {
            top = i;
        }
    }
    Ok(vec![top])
}

pub fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")))
    }
}

/// Document graph over the selected sentences.
///
/// Node numbering: `0` is the document, `1..=K` the selected sentences in
/// document order, then one node per distinct word type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocGraph {
    /// Document sentence index of each sentence node.
    pub sentences: Vec<usize>,
    /// Word types in order of first occurrence.
    pub words: Vec<String>,
    /// Per selected sentence, the word type of each token.
    pub token_types: Vec<Vec<usize>>,
    /// Per word type, the selected-sentence positions that contain it (ascending).
    pub word_sentences: Vec<Vec<usize>>,
}

impl DocGraph {
    pub fn build(doc: &Document, selected: &[usize]) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::Data("document graph needs at least one sentence".into()));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut words = Vec::new();
        let mut word_sentences: Vec<Vec<usize>> = Vec::new();
        let mut token_types = Vec::with_capacity(selected.len());
        for (pos, &si) in selected.iter().enumerate() {
            let sentence = doc
                .sentences
                .get(si)
                .ok_or_else(|| Error::Data(format!("selected sentence {si} out of range")))?;
            let mut types = Vec::with_capacity(sentence.tokens.len());
            for tok in &sentence.tokens {
                let ty = *index.entry(tok.as_str()).or_insert_with(|| {
                    words.push(tok.clone());
                    word_sentences.push(Vec::new());
                    words.len() - 1
                });
                if word_sentences[ty].last() != Some(&pos) {
                    word_sentences[ty].push(pos);
                }
                types.push(ty);
            }
            token_types.push(types);
        }
        Ok(Self {
            sentences: selected.to_vec(),
            words,
            token_types,
            word_sentences,
        })
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn node_count(&self) -> usize {
        1 + self.sentences.len() + self.words.len()
    }

    pub fn doc_node(&self) -> usize {
        0
    }

    pub fn sentence_node(&self, pos: usize) -> usize {
        1 + pos
    }

    pub fn word_node(&self, ty: usize) -> usize {
        1 + self.sentences.len() + ty
    }

    /// Sentence → document edges; one per selected sentence.
    pub fn sentence_to_doc(&self) -> Vec<(usize, usize)> {
        (0..self.sentences.len()).map(|p| (self.sentence_node(p), 0)).collect()
    }

    /// Document → sentence edges.
    pub fn doc_to_sentence(&self) -> Vec<(usize, usize)> {
        (0..self.sentences.len()).map(|p| (0, self.sentence_node(p))).collect()
    }

    /// Sentence → word edges, one per (sentence, contained word type).
    pub fn sentence_to_word(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ty, sents) in self.word_sentences.iter().enumerate() {
            out.extend(sents.iter().map(|&p| (self.sentence_node(p), self.word_node(ty))));
        }
        out
    }

    /// Word → sentence edges, the reverse of [`DocGraph::sentence_to_word`].
    pub fn word_to_sentence(&self) -> Vec<(usize, usize)> {
        self.sentence_to_word().into_iter().map(|(s, w)| (w, s)).collect()
    }
}

/// Incoming neighbourhoods for a GAT layer over a local node list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbourhoods {
    pub nodes: usize,
    /// `(target, incoming sources)`; the source list should include the target itself.
    pub targets: Vec<(usize, Vec<usize>)>,
}

impl Neighbourhoods {
    /// Self-edges plus the given directed `(source, target)` edges, for every node
    /// appearing as a target.
    pub fn from_edges(nodes: usize, targets: &[usize], edges: &[(usize, usize)]) -> Self {
        let targets = targets
            .iter()
            .map(|&t| {
                let mut src = vec![t];
                src.extend(edges.iter().filter(|e| e.1 == t && e.0 != t).map(|e| e.0));
                src.sort_unstable();
                src.dedup();
                (t, src)
            })
            .collect();
        Self { nodes, targets }
    }

    fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.targets.len() * self.nodes];
        for (r, (_, src)) in self.targets.iter().enumerate() {
            for &s in src {
                mask[r * self.nodes + s] = true;
            }
        }
        mask
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadCombine {
    Concat,
    #[default]
    Mean,
}

#[derive(Clone, Debug)]
pub struct GatHead {
    pub w: ParamId,
    /// `1 × 2·d_h`: source half first, neighbour half second.
    pub a: ParamId,
}

#[derive(Clone, Debug)]
pub struct GATParams {
    pub heads: Vec<GatHead>,
    pub head_dim: usize,
    pub combine: HeadCombine,
}

impl GATParams {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        dim: usize,
        heads: usize,
        combine: HeadCombine,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config("GAT needs at least one head".into()));
        }
        let head_dim = match combine {
            HeadCombine::Mean => dim,
            HeadCombine::Concat if dim.is_multiple_of(heads) => dim / heads,
            HeadCombine::Concat => {
                return Err(Error::Config(format!("concat heads: {heads} heads do not divide width {dim}")))
            }
        };
        let heads = (0..heads)
            .map(|k| GatHead {
                w: store.add_glorot(format!("{prefix}.head{k}.w"), dim, head_dim, rng),
                a: store.add_glorot(format!("{prefix}.head{k}.a"), 1, 2 * head_dim, rng),
            })
            .collect();
        Ok(Self {
            heads,
            head_dim,
            combine,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.heads.iter().flat_map(|h| [h.w, h.a]).collect()
    }
}

pub struct GatOutput<'t, S> {
    /// One row per target, in neighbourhood order.
    pub output: Var<'t, S>,
    /// Per head, `targets × nodes` attention weights (zero off the neighbourhood).
    pub weights: Vec<Var<'t, S>>,
}

pub fn gat_layer<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    feats: Var<'t, S>,
    hoods: &Neighbourhoods,
    params: &GATParams,
) -> Result<Var<'t, S>> {
    Ok(gat_layer_detailed(tape, store, feats, hoods, params)?.output)
}

/// Multi-head graph attention with tanh activation:
/// `h'_i = combine_k tanh(Σ_{j∈N(i)} α^k_ij W^k h_j)`,
/// `α^k_ij = softmax_j LeakyReLU(a^k · [W^k h_i ‖ W^k h_j])`.
pub fn gat_layer_detailed<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    feats: Var<'t, S>,
    hoods: &Neighbourhoods,
    params: &GATParams,
) -> Result<GatOutput<'t, S>> {
    if feats.shape()[0] != hoods.nodes {
        return Err(Error::shape("gat_layer", &feats.shape(), &[hoods.nodes]));
    }
    if hoods.targets.is_empty() {
        return Err(Error::InvalidArgument("gat_layer: no target nodes".into()));
    }
    if let Some((t, _)) = hoods.targets.iter().find(|(_, src)| src.is_empty()) {
        return Err(Error::Data(format!("graph node {t} has an empty neighbourhood")));
    }
    let targets: Vec<usize> = hoods.targets.iter().map(|(t, _)| *t).collect();
    let mask = hoods.mask();
    let dh = params.head_dim;
    let mut outs = Vec::with_capacity(params.heads.len());
    let mut weights = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let z = feats.matmul(&tape.param(store, head.w))?;
        let a = tape.param(store, head.a);
        let src = z.gather_rows(&targets)?.matmul(&a.slice_cols(0, dh)?.transpose()?)?;
        let nbr = z.matmul(&a.slice_cols(dh, dh)?.transpose()?)?.transpose()?;
        let att = src
            .add(&nbr)?
            .leaky_relu(S::lit(LEAKY_SLOPE))?
            .masked_softmax(1, &mask)?;
        outs.push(att.matmul(&z)?.tanh()?);
        weights.push(att);
    }
    let output = match params.combine {
        HeadCombine::Concat if outs.len() > 1 => tape.concat(&outs, 1)?,
        HeadCombine::Concat => outs[0],
        HeadCombine::Mean => {
            let mut acc = outs[0];
            for o in &outs[1..] {
                acc = acc.add(o)?;
            }
            acc.scale(S::one() / S::lit(outs.len() as f64))?
        }
    };
    Ok(GatOutput { output, weights })
}

/// Position-wise feed-forward block with a residual connection: `x + affine(ReLU(affine(x)))`.
#[derive(Clone, Debug)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnParams {
    pub fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, prefix: &str, dim: usize, inner: usize, rng: &mut R) -> Self {
        Self {
            w1: store.add_glorot(format!("{prefix}.w1"), dim, inner, rng),
            b1: store.add_const(format!("{prefix}.b1"), &[1, inner], 0.0),
            w2: store.add_glorot(format!("{prefix}.w2"), inner, dim, rng),
            b2: store.add_const(format!("{prefix}.b2"), &[1, dim], 0.0),
        }
    }

    pub fn forward<'t, S: Scalar>(&self, tape: &'t Tape<S>, store: &ParamStore<S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let p = |id| tape.param(store, id);
        x.affine(&p(self.w1), &p(self.b1))?.relu()?.affine(&p(self.w2), &p(self.b2))?.add(&x)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

/// Document-level upward parameters: GAT over sentence→document edges, then FFN.
#[derive(Clone, Debug)]
pub struct DocEncoderParams {
    pub gat: GATParams,
    pub ffn: FfnParams,
}

#[derive(Clone, Copy, Debug)]
pub struct DocEncoding<'t, S> {
    /// Mean of the selected sentence encodings.
    pub h_d: Var<'t, S>,
    /// After graph attention (or max pooling).
    pub h_prime: Var<'t, S>,
    /// After the feed-forward block.
    pub h_tilde: Var<'t, S>,
}

/// Pools `K × d` selected sentence encodings into a document vector. With
/// `use_gat == false` the attention step is an elementwise max over sentences.
pub fn encode_document<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    sentences: Var<'t, S>,
    params: &DocEncoderParams,
    use_gat: bool,
) -> Result<DocEncoding<'t, S>> {
    let k = sentences.shape()[0];
    if k == 0 {
        return Err(Error::Data("document encoding needs at least one sentence".into()));
    }
    let h_d = sentences.mean(0)?;
    let h_prime = if use_gat {
        let nodes = tape.concat(&[h_d, sentences], 0)?;
        let edges: Vec<(usize, usize)> = (1..=k).map(|s| (s, 0)).collect();
        let hoods = Neighbourhoods::from_edges(k + 1, &[0], &edges);
        gat_layer(tape, store, nodes, &hoods, &params.gat)?
    } else {
        sentences.max(0)?
    };
    let h_tilde = params.ffn.forward(tape, store, h_prime)?;
    Ok(DocEncoding { h_d, h_prime, h_tilde })
}
