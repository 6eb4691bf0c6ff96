//! Tree Transformer sentence encoder.
//!
//! Each tree node gathers its rows into a matrix `X` (parent first in a
//! dependency tree, children only in a constituency tree), runs multi-branch
//! attention over `X` and compresses the result into one vector:
//!
//! ```text
//! B_i  = softmax(X Wq_i (X Wk_i)ᵀ / √d) X Wv_i
//! B̄_i  = LayerNorm(B_i Wb_i + B_i) · κ_i
//! X'   = Σ_i α_i · PCNN_i(B̄_i)            PCNN = affine → ReLU → affine, per row
//! out  = tanh((mean_rows X' + mean_rows X) W + b)
//! ```
//!
//! Trees are evaluated bottom-up; a node's output becomes a row of its parent's `X`.

use crate::corpus::{ConstNode, ConstTree, DepTree, Sentence};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct BranchParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wb: ParamId,
    pub kappa: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub pcnn_w1: ParamId,
    pub pcnn_b1: ParamId,
    pub pcnn_w2: ParamId,
    pub pcnn_b2: ParamId,
    pub alpha: ParamId,
}

#[derive(Clone, Debug)]
pub struct TreeTransformerParams {
    pub branches: Vec<BranchParams>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub dim: usize,
}

impl TreeTransformerParams {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        dim: usize,
        n_branches: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_branches == 0 {
            return Err(Error::Config("tree transformer needs at least one branch".into()));
        }
        let branches = (0..n_branches)
            .map(|i| {
                let p = format!("{prefix}.branch{i}");
                BranchParams {
                    wq: store.add_glorot(format!("{p}.wq"), dim, dim, rng),
                    wk: store.add_glorot(format!("{p}.wk"), dim, dim, rng),
                    wv: store.add_glorot(format!("{p}.wv"), dim, dim, rng),
                    wb: store.add_glorot(format!("{p}.wb"), dim, dim, rng),
                    kappa: store.add_const(format!("{p}.kappa"), &[1, 1], 1.0),
                    ln_gain: store.add_const(format!("{p}.ln_gain"), &[1, dim], 1.0),
                    ln_bias: store.add_const(format!("{p}.ln_bias"), &[1, dim], 0.0),
                    pcnn_w1: store.add_glorot(format!("{p}.pcnn_w1"), dim, dim, rng),
                    pcnn_b1: store.add_const(format!("{p}.pcnn_b1"), &[1, dim], 0.0),
                    pcnn_w2: store.add_glorot(format!("{p}.pcnn_w2"), dim, dim, rng),
                    pcnn_b2: store.add_const(format!("{p}.pcnn_b2"), &[1, dim], 0.0),
                    alpha: store.add_const(format!("{p}.alpha"), &[1, 1], 1.0 / n_branches as f64),
                }
            })
            .collect();
        Ok(Self {
            branches,
            out_w: store.add_glorot(format!("{prefix}.out_w"), dim, dim, rng),
            out_b: store.add_const(format!("{prefix}.out_b"), &[1, dim], 0.0),
            dim,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .branches
            .iter()
            .flat_map(|b| {
                [
                    b.wq, b.wk, b.wv, b.wb, b.kappa, b.ln_gain, b.ln_bias, b.pcnn_w1, b.pcnn_b1, b.pcnn_w2, b.pcnn_b2, b.alpha,
                ]
            })
            .collect();
        ids.extend([self.out_w, self.out_b]);
        ids
    }
}

/// Output of multi-branch attention plus the per-branch attention matrices.
pub struct BranchAttention<'t, S> {
    pub output: Var<'t, S>,
    pub weights: Vec<Var<'t, S>>,
}

pub fn branch_attention<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    x: Var<'t, S>,
    params: &TreeTransformerParams,
) -> Result<Var<'t, S>> {
    Ok(branch_attention_detailed(tape, store, x, params)?.output)
}

pub fn branch_attention_detailed<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    x: Var<'t, S>,
    params: &TreeTransformerParams,
) -> Result<BranchAttention<'t, S>> {
    let shape = x.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[1] != params.dim {
        return Err(Error::shape("branch_attention", &shape, &[0, params.dim]));
    }
    let scale = S::one() / S::lit(params.dim as f64).sqrt();
    let eps = S::lit(LAYER_NORM_EPS);
    let p = |id| tape.param(store, id);
    let mut output: Option<Var<'t, S>> = None;
    let mut weights = Vec::with_capacity(params.branches.len());
    for b in &params.branches {
        let q = x.matmul(&p(b.wq))?;
        let k = x.matmul(&p(b.wk))?;
        let v = x.matmul(&p(b.wv))?;
        let att = q.matmul(&k.transpose()?)?.scale(scale)?.softmax(1)?;
        let heads = att.matmul(&v)?;
        let normed = heads
            .matmul(&p(b.wb))?
            .add(&heads)?
            .layer_norm(&p(b.ln_gain), &p(b.ln_bias), eps)?
            .mul(&p(b.kappa))?;
        let pcnn = normed
            .affine(&p(b.pcnn_w1), &p(b.pcnn_b1))?
            .relu()?
            .affine(&p(b.pcnn_w2), &p(b.pcnn_b2))?;
        let weighted = pcnn.mul(&p(b.alpha))?;
        output = Some(match output {
            None => weighted,
            Some(acc) => acc.add(&weighted)?,
        });
        weights.push(att);
    }
    Ok(BranchAttention {
        output: output.expect("at least one branch"),
        weights,
    })
}

/// Encodes one node from its optional parent row and its child rows. Returns `1 × d`.
pub fn encode_tree_node<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    parent: Option<Var<'t, S>>,
    children: &[Var<'t, S>],
    params: &TreeTransformerParams,
) -> Result<Var<'t, S>> {
    let rows: Vec<Var<'t, S>> = parent.into_iter().chain(children.iter().copied()).collect();
    if rows.is_empty() {
        return Err(Error::Data("tree node without parent or children".into()));
    }
    let x = if rows.len() == 1 { rows[0] } else { tape.concat(&rows, 0)? };
    let attended = branch_attention(tape, store, x, params)?.mean(0)?;
    let pooled = x.mean(0)?;
    attended
        .add(&pooled)?
        .affine(&tape.param(store, params.out_w), &tape.param(store, params.out_b))?
        .tanh()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TreeKind {
    Dependency,
    Constituency,
}

/// Order in which sibling subtrees are evaluated; rows of `X` keep tree order either way.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SiblingOrder {
    #[default]
    Forward,
    Reverse,
}

/// Records `(tree, node)` each time a node's encoding completes.
pub type Trace = Vec<(TreeKind, usize)>;

/// Bottom-up dependency encoding. Each node seeds its parent row with its own word
/// vector (row of `words`) and takes its dependents' encodings as children.
pub fn encode_dependency<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    tree: &DepTree,
    words: Var<'t, S>,
    params: &TreeTransformerParams,
    order: SiblingOrder,
    mut trace: Option<&mut Trace>,
) -> Result<Var<'t, S>> {
    let n = tree.len();
    if words.shape() != [n, params.dim] {
        return Err(Error::shape("encode_dependency", &words.shape(), &[n, params.dim]));
    }
    let children = tree.children();
    let mut done: Vec<Option<Var<'t, S>>> = vec![None; n];
    // explicit post-order: (node, expanded)
    let mut stack = vec![(tree.root(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            let kids: Vec<Var<'t, S>> = children[node].iter().map(|&c| done[c].expect("child encoded")).collect();
            let parent = words.gather_rows(&[node])?;
            done[node] = Some(encode_tree_node(tape, store, Some(parent), &kids, params)?);
            if let Some(t) = trace.as_deref_mut() {
                t.push((TreeKind::Dependency, node));
            }
            continue;
        }
        stack.push((node, true));
        push_children(&mut stack, &children[node], order);
    }
    Ok(done[tree.root()].expect("root encoded"))
}

fn push_children(stack: &mut Vec<(usize, bool)>, kids: &[usize], order: SiblingOrder) {
    // the stack pops last-in first, so forward evaluation pushes in reverse
    match order {
        SiblingOrder::Forward => stack.extend(kids.iter().rev().map(|&c| (c, false))),
        SiblingOrder::Reverse => stack.extend(kids.iter().map(|&c| (c, false))),
    }
}

/// Bottom-up constituency encoding. Leaves contribute their word vectors; every
/// phrase node is encoded from its children's rows.
pub fn encode_constituency<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    tree: &ConstTree,
    words: Var<'t, S>,
    params: &TreeTransformerParams,
    order: SiblingOrder,
    mut trace: Option<&mut Trace>,
) -> Result<Var<'t, S>> {
    let n = tree.leaf_count();
    if words.shape() != [n, params.dim] {
        return Err(Error::shape("encode_constituency", &words.shape(), &[n, params.dim]));
    }
    let mut done: Vec<Option<Var<'t, S>>> = vec![None; tree.len()];
    let mut stack = vec![(tree.root(), false)];
    while let Some((node, expanded)) = stack.pop() {
        match tree.node(node) {
            ConstNode::Leaf { token } => {
                done[node] = Some(words.gather_rows(&[*token])?);
            }
            ConstNode::Phrase { children, .. } if expanded => {
                if children.is_empty() {
                    return Err(Error::Data("constituency node without children".into()));
                }
                let kids: Vec<Var<'t, S>> = children.iter().map(|&c| done[c].expect("child encoded")).collect();
                done[node] = Some(encode_tree_node(tape, store, None, &kids, params)?);
                if let Some(t) = trace.as_deref_mut() {
                    t.push((TreeKind::Constituency, node));
                }
            }
            ConstNode::Phrase { children, .. } => {
                stack.push((node, true));
                push_children(&mut stack, children, order);
            }
        }
    }
    Ok(done[tree.root()].expect("root encoded"))
}

/// Per-sentence channel encodings and their fusion.
#[derive(Clone, Copy, Debug)]
pub struct SentenceEncoding<'t, S> {
    pub h_d: Option<Var<'t, S>>,
    pub h_c: Option<Var<'t, S>>,
    pub h: Var<'t, S>,
}

/// Fuses the two channels: `h = (h_d + h_c) / 2`.
pub fn fuse<'t, S: Scalar>(h_d: Var<'t, S>, h_c: Var<'t, S>) -> Result<Var<'t, S>> {
    h_d.add(&h_c)?.scale(S::lit(0.5))
}

/// Both tree channels for one sentence; `words_d` feeds the dependency encoder and
/// `words_c` the constituency encoder.
pub fn encode_sentence<'t, S: Scalar>(
    tape: &'t Tape<S>,
    store: &ParamStore<S>,
    sentence: &Sentence,
    words_d: Var<'t, S>,
    words_c: Var<'t, S>,
    dtt: &TreeTransformerParams,
    ctt: &TreeTransformerParams,
) -> Result<SentenceEncoding<'t, S>> {
    let h_d = encode_dependency(tape, store, &sentence.dep, words_d, dtt, SiblingOrder::Forward, None)?;
    let h_c = encode_constituency(tape, store, &sentence.cons, words_c, ctt, SiblingOrder::Forward, None)?;
    Ok(SentenceEncoding {
        h_d: Some(h_d),
        h_c: Some(h_c),
        h: fuse(h_d, h_c)?,
    })
}
