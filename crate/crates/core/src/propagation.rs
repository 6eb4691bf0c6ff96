//! Two-pass bidirectional propagation.
//!
//! Pass 1 encodes every sentence, keeps the label-relevant ones and pools them into
//! a document vector. The downward update then pushes document information into
//! the kept sentences and from those into their word types, separately for each
//! tree channel. Pass 2 re-encodes only the kept sentences from the updated
//! channel-specific word vectors and pools again over the same graph.

use crate::config::Channel;
use crate::corpus::{label_embeddings, Document, Sentence};
use crate::error::{Error, Result};
use crate::graph::{
    encode_document, gat_layer, labelwise_scores, select_sentences, DocEncoderParams, DocEncoding, DocGraph,
    FfnParams, GATParams, HeadCombine, Neighbourhoods,
};
use crate::model::GraphTreeModel;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tree::{encode_constituency, encode_dependency, fuse, SentenceEncoding, SiblingOrder, TreeTransformerParams};
use rand::Rng;

/// One downward stage: graph attention followed by a feed-forward block, or a passthrough.
#[derive(Clone, Debug)]
pub enum Stage {
    Learned { gat: GATParams, ffn: FfnParams },
    Identity,
}

impl Stage {
    pub fn learned<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        dim: usize,
        heads: usize,
        combine: HeadCombine,
        ffn_inner: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Stage::Learned {
            gat: GATParams::new(store, &format!("{prefix}.gat"), dim, heads, combine, rng)?,
            ffn: FfnParams::new(store, &format!("{prefix}.ffn"), dim, ffn_inner, rng),
        })
    }

    /// Updates the `targets` rows of `nodes`; identity stages return those rows unchanged.
    fn apply<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        store: &ParamStore<S>,
        nodes: Var<'t, S>,
        hoods: &Neighbourhoods,
    ) -> Result<Var<'t, S>> {
        match self {
            Stage::Identity => {
                let rows: Vec<usize> = hoods.targets.iter().map(|(t, _)| *t).collect();
                nodes.gather_rows(&rows)
            }
            Stage::Learned { gat, ffn } => {
                let h = gat_layer(tape, store, nodes, hoods, gat)?;
                ffn.forward(tape, store, h)
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Stage::Identity => Vec::new(),
            Stage::Learned { gat, ffn } => gat.param_ids().into_iter().chain(ffn.param_ids()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChannelDownward {
    pub channel: Channel,
    pub doc_to_sentence: Stage,
    pub sentence_to_word: Stage,
}

/// Downward parameters, one pair of stages per active channel.
#[derive(Clone, Debug)]
pub struct DownwardParams {
    pub channels: Vec<ChannelDownward>,
}

impl DownwardParams {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        channels: &[Channel],
        dim: usize,
        heads: usize,
        combine: HeadCombine,
        ffn_inner: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let channels = channels
            .iter()
            .map(|&channel| {
                let p = format!("down.{}", channel.name());
                Ok(ChannelDownward {
                    channel,
                    doc_to_sentence: Stage::learned(store, &format!("{p}.doc_sent"), dim, heads, combine, ffn_inner, rng)?,
                    sentence_to_word: Stage::learned(store, &format!("{p}.sent_word"), dim, heads, combine, ffn_inner, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { channels })
    }

    pub fn identity(channels: &[Channel]) -> Self {
        Self {
            channels: channels
                .iter()
                .map(|&channel| ChannelDownward {
                    channel,
                    doc_to_sentence: Stage::Identity,
                    sentence_to_word: Stage::Identity,
                })
                .collect(),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.channels
            .iter()
            .flat_map(|c| c.doc_to_sentence.param_ids().into_iter().chain(c.sentence_to_word.param_ids()))
            .collect()
    }
}

/// Word-to-document parameters.
#[derive(Clone, Debug)]
pub struct UpwardParams {
    pub dtt: Option<TreeTransformerParams>,
    pub ctt: Option<TreeTransformerParams>,
    pub doc: DocEncoderParams,
}

/// Encodes one sentence on the given channels, taking each channel's `n × d`
/// token matrix from `words`.
pub fn encode_channels<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    sentence: &Sentence,
    upward: &UpwardParams,
    channels: &[Channel],
    mut words: impl FnMut(Channel) -> Result<Var<'t, S>>,
) -> Result<SentenceEncoding<'t, S>> {
    let (mut h_d, mut h_c, mut pooled) = (None, None, None);
    for &ch in channels {
        let w = words(ch)?;
        match ch {
            Channel::Dep => {
                let p = configured(&upward.dtt, "dependency")?;
                h_d = Some(encode_dependency(tape, store, &sentence.dep, w, p, SiblingOrder::Forward, None)?);
            }
            Channel::Const => {
                let p = configured(&upward.ctt, "constituency")?;
                h_c = Some(encode_constituency(tape, store, &sentence.cons, w, p, SiblingOrder::Forward, None)?);
            }
            Channel::Pooled => pooled = Some(w.mean(0)?),
        }
    }
    let h = match (h_d, h_c, pooled) {
        (Some(d), Some(c), _) => fuse(d, c)?,
        (Some(d), None, _) => d,
        (None, Some(c), _) => c,
        (None, None, Some(p)) => p,
        _ => return Err(Error::InvalidArgument("no sentence channel configured".into())),
    };
    Ok(SentenceEncoding { h_d, h_c, h })
}

fn configured<'a>(p: &'a Option<TreeTransformerParams>, name: &str) -> Result<&'a TreeTransformerParams> {
    p.as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{name} encoder is not configured")))
}

fn channel_of<'t, S: Scalar>(enc: &SentenceEncoding<'t, S>, ch: Channel) -> Result<Var<'t, S>> {
    match ch {
        Channel::Dep => enc.h_d,
        Channel::Const => enc.h_c,
        Channel::Pooled => Some(enc.h),
    }
    .ok_or_else(|| Error::InvalidArgument(format!("sentence encoding lacks the {} channel", ch.name())))
}

fn stack<'t, S: Scalar>(tape: &'t Tape<S>, rows: &[Var<'t, S>]) -> Result<Var<'t, S>> {
    match rows {
        [one] => Ok(*one),
        _ => tape.concat(rows, 0),
    }
}

/// Intermediate state between passes.
pub struct PassState<'t, S> {
    pub graph: DocGraph,
    /// Current encodings of the selected sentences, in graph order.
    pub sentences: Vec<SentenceEncoding<'t, S>>,
    /// Current document encoding; `None` until pass 1 has pooled.
    pub doc: Option<DocEncoding<'t, S>>,
    /// Per channel, downward-updated sentence vectors (`K × d`).
    pub updated_sentences: Vec<(Channel, Var<'t, S>)>,
    /// Per channel, current word-type vectors (`W × d`, rows follow `graph.words`).
    pub words: Vec<(Channel, Var<'t, S>)>,
    /// Completed downward/upward rounds.
    pub iteration: usize,
}

impl<'t, S: Scalar> PassState<'t, S> {
    pub fn words_for(&self, ch: Channel) -> Option<Var<'t, S>> {
        self.words.iter().find(|(c, _)| *c == ch).map(|(_, v)| *v)
    }

    pub fn updated_for(&self, ch: Channel) -> Option<Var<'t, S>> {
        self.updated_sentences.iter().find(|(c, _)| *c == ch).map(|(_, v)| *v)
    }
}

/// Which sentences and word types a pass-2 computation touched.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessLog {
    pub sentences: Vec<usize>,
    pub word_types: Vec<String>,
}

/// Everything produced for one document.
pub struct Encoded<'t, S> {
    /// `N × L` label-wise scores of all sentences.
    pub scores: Var<'t, S>,
    pub selected: Vec<usize>,
    pub pass1: DocEncoding<'t, S>,
    /// Final document encoding (equal to `pass1` when bidirectional propagation is off).
    pub output: DocEncoding<'t, S>,
    pub state: PassState<'t, S>,
}

/// Pass 1: encode all sentences, select, build the graph, pool.
pub fn first_pass<'t, S: Scalar>(
    tape: &'t Tape<S>,
    model: &GraphTreeModel<S>,
    doc: &Document,
) -> Result<(Var<'t, S>, PassState<'t, S>)> {
    let store = &model.store;
    let p = &model.params;
    let channels = model.channels();
    let encs = doc
        .sentences
        .iter()
        .map(|s| {
            let w = p.embedding.embed_tokens(tape, store, &model.vocab, s)?;
            encode_channels(tape, store, s, &p.upward, &channels, |_| Ok(w))
        })
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<Var<'t, S>> = encs.iter().map(|e| e.h).collect();
    let labels = label_embeddings(tape, store, &p.embedding, &model.vocab, &model.labels)?;
    let scores = labelwise_scores(stack(tape, &hs)?, labels, model.config.score_axis)?;
    let selected = select_sentences(&scores.value(), model.config.tau)?;
    let graph = DocGraph::build(doc, &selected)?;
    let sentences: Vec<SentenceEncoding<'t, S>> = selected.iter().map(|&i| encs[i]).collect();
    let kept: Vec<Var<'t, S>> = sentences.iter().map(|e| e.h).collect();
    let pooled = encode_document(tape, store, stack(tape, &kept)?, &p.upward.doc, !model.config.ablation.no_gat)?;
    let ids: Vec<usize> = graph.words.iter().map(|w| model.vocab.id(w)).collect();
    let initial = p.embedding.lookup(tape, store, &ids)?;
    let state = PassState {
        words: channels.iter().map(|&c| (c, initial)).collect(),
        graph,
        sentences,
        doc: Some(pooled),
        updated_sentences: Vec::new(),
        iteration: 0,
    };
    Ok((scores, state))
}

/// Document → sentence → word update for every channel.
pub fn downward_update<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    state: &mut PassState<'t, S>,
    params: &DownwardParams,
) -> Result<()> {
    let doc = state
        .doc
        .ok_or_else(|| Error::InvalidArgument("downward update requested before the first pass".into()))?;
    let k = state.graph.sentence_count();
    let w = state.graph.word_count();
    let mut updated = Vec::with_capacity(params.channels.len());
    let mut words = Vec::with_capacity(params.channels.len());
    for stage in &params.channels {
        let ch = stage.channel;
        let rows = state.sentences.iter().map(|e| channel_of(e, ch)).collect::<Result<Vec<_>>>()?;
        // local nodes: document first, then sentences
        let nodes = tape.concat(&[vec![doc.h_tilde], rows].concat(), 0)?;
        let targets: Vec<usize> = (1..=k).collect();
        let edges: Vec<(usize, usize)> = targets.iter().map(|&s| (0, s)).collect();
        let hoods = Neighbourhoods::from_edges(k + 1, &targets, &edges);
        let h_prime = stage.doc_to_sentence.apply(tape, store, nodes, &hoods)?;

        // local nodes: sentences first, then word types
        let current = state
            .words_for(ch)
            .ok_or_else(|| Error::InvalidArgument(format!("no word vectors for the {} channel", ch.name())))?;
        let nodes = tape.concat(&[h_prime, current], 0)?;
        let targets: Vec<usize> = (k..k + w).collect();
        let edges: Vec<(usize, usize)> = state
            .graph
            .word_sentences
            .iter()
            .enumerate()
            .flat_map(|(ty, sents)| sents.iter().map(move |&s| (s, k + ty)))
            .collect();
        let hoods = Neighbourhoods::from_edges(k + w, &targets, &edges);
        words.push((ch, stage.sentence_to_word.apply(tape, store, nodes, &hoods)?));
        updated.push((ch, h_prime));
    }
    state.updated_sentences = updated;
    state.words = words;
    Ok(())
}

/// Re-encodes the selected sentences from the channel word vectors and pools again.
pub fn upward_pass<'t, S: Scalar>(
    tape: &'t Tape<S>,
    model: &GraphTreeModel<S>,
    doc: &Document,
    state: &mut PassState<'t, S>,
    mut log: Option<&mut AccessLog>,
) -> Result<()> {
    let store = &model.store;
    let channels = model.channels();
    let mut encs = Vec::with_capacity(state.graph.sentence_count());
    for (pos, &si) in state.graph.sentences.iter().enumerate() {
        let types = &state.graph.token_types[pos];
        if let Some(l) = log.as_deref_mut() {
            l.sentences.push(si);
            l.word_types.extend(types.iter().map(|&t| state.graph.words[t].clone()));
        }
        let words = &state.words;
        let enc = encode_channels(tape, store, &doc.sentences[si], &model.params.upward, &channels, |ch| {
            let table = words
                .iter()
                .find(|(c, _)| *c == ch)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::InvalidArgument(format!("no word vectors for the {} channel", ch.name())))?;
            table.gather_rows(types)
        })?;
        encs.push(enc);
    }
    let hs: Vec<Var<'t, S>> = encs.iter().map(|e| e.h).collect();
    let pooled = encode_document(tape, store, stack(tape, &hs)?, &model.params.upward.doc, !model.config.ablation.no_gat)?;
    state.sentences = encs;
    state.doc = Some(pooled);
    state.iteration += 1;
    Ok(())
}

/// Pass 1, `iterations` rounds of downward update and upward re-encoding.
pub fn iterate_updates<'t, S: Scalar>(
    tape: &'t Tape<S>,
    model: &GraphTreeModel<S>,
    doc: &Document,
    iterations: usize,
    mut log: Option<&mut AccessLog>,
) -> Result<Encoded<'t, S>> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    let (scores, mut state) = first_pass(tape, model, doc)?;
    let pass1 = state.doc.expect("pooled in pass 1");
    let selected = state.graph.sentences.clone();
    if !model.config.ablation.no_bidir {
        for _ in 0..iterations {
            downward_update(tape, &model.store, &mut state, &model.params.downward)?;
            upward_pass(tape, model, doc, &mut state, log.as_deref_mut())?;
        }
    }
    let output = state.doc.expect("pooled");
    Ok(Encoded {
        scores,
        selected,
        pass1,
        output,
        state,
    })
}

/// The two-pass workflow: one downward update between two upward passes.
pub fn two_pass_encode<'t, S: Scalar>(
    tape: &'t Tape<S>,
    model: &GraphTreeModel<S>,
    doc: &Document,
    log: Option<&mut AccessLog>,
) -> Result<Encoded<'t, S>> {
    iterate_updates(tape, model, doc, 1, log)
}
