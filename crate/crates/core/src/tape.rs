//! Record-and-replay reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each primitive evaluates
//! eagerly and, when any operand requires a gradient, appends its operands to
//! the tape so that [`Tape::backward`] can replay the record in reverse.
//! Gradients accumulate additively over every use of a node.
//!
//! All reductions keep the reduced axis with extent 1, so a row-sum of an
//! `r × c` matrix is `r × 1` and broadcasts back against the input.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{axis_split, Tensor};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    Concat { inputs: Vec<usize>, axis: usize },
    Sum { x: usize, axis: usize },
    Mean { x: usize, axis: usize },
    SumAll(usize),
    Max { x: usize, argmax: Vec<usize> },
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, S),
    Sigmoid(usize),
    LnClamp { x: usize, lo: S, hi: S },
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<S>, inv_std: Vec<S> },
    Affine { x: usize, w: usize, b: usize },
    Transpose(usize),
    GatherRows { x: usize, rows: Rc<[usize]> },
    SliceCols { x: usize, start: usize },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat { .. } => "concat",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SumAll(..) => "sum_all",
            Op::Max { .. } => "max",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::LnClamp { .. } => "ln_clamp",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Affine { .. } => "affine",
            Op::Transpose(..) => "transpose",
            Op::GatherRows { .. } => "gather_rows",
            Op::SliceCols { .. } => "slice_cols",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Scale(x, _)
            | Op::Sum { x, .. }
            | Op::Mean { x, .. }
            | Op::SumAll(x)
            | Op::Max { x, .. }
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Sigmoid(x)
            | Op::LnClamp { x, .. }
            | Op::Softmax { x, .. }
            | Op::Transpose(x)
            | Op::GatherRows { x, .. }
            | Op::SliceCols { x, .. } => vec![*x],
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// One entry of the computation record: a primitive and the nodes it read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub op: &'static str,
    pub inputs: Vec<usize>,
    pub output: usize,
}

#[derive(Default)]
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
    bound: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, S> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
        }
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool, param: Option<ParamId>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Pushes the result of a primitive; the op is only recorded when an operand needs a gradient.
    fn record(&self, value: Tensor<S>, op: Op<S>) -> Var<'_, S> {
        let rg = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        let op = if rg { op } else { Op::Constant };
        self.push(value, op, rg, None)
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, true, None)
    }

    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Constant, false, None)
    }

    /// Binds a stored parameter; repeated calls return the same node so gradients sum over uses.
    pub fn param(&self, store: &ParamStore<S>, id: ParamId) -> Var<'_, S> {
        if let Some(&node) = self.bound.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let trainable = store.is_trainable(id);
        let v = self.push(store.get(id).clone(), Op::Leaf, trainable, Some(id));
        self.bound.borrow_mut().insert(id, v.id);
        v
    }

    /// Makes later [`Tape::param`] calls for `id` resolve to `var`.
    pub fn bind_param(&self, id: ParamId, var: Var<'_, S>) {
        self.bound.borrow_mut().insert(id, var.id);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// The recorded primitives in evaluation (topological) order.
    pub fn record_list(&self) -> Vec<OpRecord> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .filter(|(_, n)| !matches!(n.op, Op::Leaf | Op::Constant))
            .map(|(i, n)| OpRecord {
                op: n.op.name(),
                inputs: n.op.inputs(),
                output: i,
            })
            .collect()
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t, S>], axis: usize) -> Result<Var<'t, S>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let value = {
            let nodes = self.nodes.borrow();
            let base = nodes[first.id].value.shape().to_vec();
            if axis >= base.len() {
                return Err(Error::InvalidArgument(format!("concat axis {axis} out of range for {base:?}")));
            }
            let mut out_shape = base.clone();
            out_shape[axis] = 0;
            for p in parts {
                let s = nodes[p.id].value.shape();
                let compatible = s.len() == base.len()
                    && s.iter().zip(&base).enumerate().all(|(k, (a, b))| k == axis || a == b);
                if !compatible {
                    return Err(Error::shape("concat", &base, s));
                }
                out_shape[axis] += s[axis];
            }
            let (outer, _, inner) = axis_split(&out_shape, axis);
            let mut data = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for p in parts {
                    let t = &nodes[p.id].value;
                    let chunk = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Tensor::new(out_shape, data)?
        };
        Ok(self.record(
            value,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        ))
    }

    /// Reverse pass from `output` seeded with `seed`.
    pub fn backward(&self, output: Var<'_, S>, seed: Tensor<S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        if !nodes.iter().any(|n| !matches!(n.op, Op::Leaf | Op::Constant)) {
            return Err(Error::EmptyTape);
        }
        let out_shape = nodes[output.id].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::shape("backward seed", seed.shape(), out_shape));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; output.id + 1];
        grads[output.id] = Some(seed.into_data());

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut params = Vec::new();
        let mut out = Vec::with_capacity(grads.len());
        for (id, g) in grads.into_iter().enumerate() {
            let t = g.map(|d| Tensor::new(nodes[id].value.shape().to_vec(), d).expect("grad shape"));
            if let (Some(p), true) = (nodes[id].param, t.is_some()) {
                params.push((p, id));
            }
            out.push(t);
        }
        Ok(Gradients { grads: out, params })
    }
}

/// Gradient buffers produced by a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: Vec<(ParamId, usize)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `var`, zeros when it did not influence the output.
    pub fn wrt(&self, var: Var<'_, S>) -> Tensor<S> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.params
            .iter()
            .filter_map(|&(p, id)| self.grads[id].as_ref().map(|g| (p, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, n)| self.grads[n].as_ref())
    }
}

fn add_into<S: Scalar>(grads: &mut [Option<Vec<S>>], nodes: &[Node<S>], id: usize, contribution: Vec<S>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(contribution).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contribution),
    }
}

fn add_into_with<S: Scalar>(
    grads: &mut [Option<Vec<S>>],
    nodes: &[Node<S>],
    id: usize,
    f: impl FnOnce(&mut [S]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![S::zero(); nodes[id].value.len()]);
    f(slot);
}

fn backprop<S: Scalar>(nodes: &[Node<S>], id: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
    let node = &nodes[id];
    let y = node.value.data();
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            if nodes[*a].requires_grad {
                let mut ga = vec![S::zero(); m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == S::zero() {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * tb.data()[p * n + j];
                        }
                    }
                }
                add_into(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![S::zero(); k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = ta.data()[i * k + p];
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                add_into(grads, nodes, *b, gb);
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
            let out_shape = node.value.shape();
            for (operand, s) in [(*a, S::one()), (*b, sign)] {
                let map = broadcast_map(out_shape, nodes[operand].value.shape());
                add_into_with(grads, nodes, operand, |acc| {
                    for (o, &src) in map.iter().enumerate() {
                        acc[src] += g[o] * s;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let out_shape = node.value.shape();
            let ma = broadcast_map(out_shape, nodes[*a].value.shape());
            let mb = broadcast_map(out_shape, nodes[*b].value.shape());
            let (da, db) = (nodes[*a].value.data(), nodes[*b].value.data());
            add_into_with(grads, nodes, *a, |acc| {
                for o in 0..g.len() {
                    acc[ma[o]] += g[o] * db[mb[o]];
                }
            });
            add_into_with(grads, nodes, *b, |acc| {
                for o in 0..g.len() {
                    acc[mb[o]] += g[o] * da[ma[o]];
                }
            });
        }
        Op::Scale(x, s) => add_into(grads, nodes, *x, g.iter().map(|&v| v * *s).collect()),
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = axis_split(node.value.shape(), *axis);
            let mut offset = 0;
            let mut parts: Vec<Vec<S>> = inputs.iter().map(|&i| Vec::with_capacity(nodes[i].value.len())).collect();
            for _ in 0..outer {
                for (k, &i) in inputs.iter().enumerate() {
                    let chunk = nodes[i].value.shape()[*axis] * inner;
                    parts[k].extend_from_slice(&g[offset..offset + chunk]);
                    offset += chunk;
                }
            }
            for (k, &i) in inputs.iter().enumerate() {
                add_into(grads, nodes, i, std::mem::take(&mut parts[k]));
            }
        }
        Op::Sum { x, axis } | Op::Mean { x, axis } => {
            let (outer, len, inner) = axis_split(nodes[*x].value.shape(), *axis);
            let factor = if matches!(node.op, Op::Mean { .. }) {
                S::one() / S::lit(len as f64)
            } else {
                S::one()
            };
            let mut gx = vec![S::zero(); outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        gx[(o * len + l) * inner + i] = g[o * inner + i] * factor;
                    }
                }
            }
            add_into(grads, nodes, *x, gx);
        }
        Op::SumAll(x) => add_into(grads, nodes, *x, vec![g[0]; nodes[*x].value.len()]),
        Op::Max { x, argmax, .. } => {
            add_into_with(grads, nodes, *x, |acc| {
                for (o, &src) in argmax.iter().enumerate() {
                    acc[src] += g[o];
                }
            });
        }
        Op::Tanh(x) => add_into(
            grads,
            nodes,
            *x,
            g.iter().zip(y).map(|(&g, &y)| g * (S::one() - y * y)).collect(),
        ),
        Op::Relu(x) => {
            let xs = nodes[*x].value.data();
            add_into(
                grads,
                nodes,
                *x,
                g.iter().zip(xs).map(|(&g, &v)| if v > S::zero() { g } else { S::zero() }).collect(),
            )
        }
        Op::LeakyRelu(x, slope) => {
            let xs = nodes[*x].value.data();
            add_into(
                grads,
                nodes,
                *x,
                g.iter().zip(xs).map(|(&g, &v)| if v > S::zero() { g } else { g * *slope }).collect(),
            )
        }
        Op::Sigmoid(x) => add_into(
            grads,
            nodes,
            *x,
            g.iter().zip(y).map(|(&g, &y)| g * y * (S::one() - y)).collect(),
        ),
        Op::LnClamp { x, lo, hi } => {
            let xs = nodes[*x].value.data();
            add_into(
                grads,
                nodes,
                *x,
                g.iter()
                    .zip(xs)
                    .map(|(&g, &v)| if v >= *lo && v <= *hi { g / v } else { S::zero() })
                    .collect(),
            )
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = axis_split(node.value.shape(), *axis);
            let mut gx = vec![S::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let dot: S = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                    for l in 0..len {
                        gx[idx(l)] = y[idx(l)] * (g[idx(l)] - dot);
                    }
                }
            }
            add_into(grads, nodes, *x, gx);
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let c = node.value.cols();
            let rows = y.len() / c;
            let gv = nodes[*gain].value.data();
            let nf = S::lit(c as f64);
            let mut gx = vec![S::zero(); y.len()];
            let mut gg = vec![S::zero(); c];
            let mut gb = vec![S::zero(); c];
            for r in 0..rows {
                let row = r * c..(r + 1) * c;
                let dxhat: Vec<S> = (0..c).map(|j| g[row.start + j] * gv[j]).collect();
                let sum_d: S = dxhat.iter().copied().sum();
                let sum_dx: S = (0..c).map(|j| dxhat[j] * xhat[row.start + j]).sum();
                for j in 0..c {
                    let k = row.start + j;
                    gx[k] = inv_std[r] / nf * (nf * dxhat[j] - sum_d - xhat[k] * sum_dx);
                    gg[j] += g[k] * xhat[k];
                    gb[j] += g[k];
                }
            }
            add_into(grads, nodes, *x, gx);
            add_into(grads, nodes, *gain, gg);
            add_into(grads, nodes, *bias, gb);
        }
        Op::Affine { x, w, b } => {
            let (tx, tw) = (&nodes[*x].value, &nodes[*w].value);
            let (m, k, n) = (tx.rows(), tx.cols(), tw.cols());
            if nodes[*x].requires_grad {
                let mut gx = vec![S::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = S::zero();
                        for j in 0..n {
                            acc += g[i * n + j] * tw.data()[p * n + j];
                        }
                        gx[i * k + p] = acc;
                    }
                }
                add_into(grads, nodes, *x, gx);
            }
            if nodes[*w].requires_grad {
                let mut gw = vec![S::zero(); k * n];
                for i in 0..m {
                    for p in 0..k {
                        let xip = tx.data()[i * k + p];
                        for j in 0..n {
                            gw[p * n + j] += xip * g[i * n + j];
                        }
                    }
                }
                add_into(grads, nodes, *w, gw);
            }
            let mut gb = vec![S::zero(); n];
            for i in 0..m {
                for j in 0..n {
                    gb[j] += g[i * n + j];
                }
            }
            add_into(grads, nodes, *b, gb);
        }
        Op::Transpose(x) => {
            let (r, c) = (node.value.rows(), node.value.cols());
            let mut gx = vec![S::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[j * r + i] = g[i * c + j];
                }
            }
            add_into(grads, nodes, *x, gx);
        }
        Op::GatherRows { x, rows } => {
            let c = node.value.cols();
            add_into_with(grads, nodes, *x, |acc| {
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        acc[r * c + j] += g[k * c + j];
                    }
                }
            });
        }
        Op::SliceCols { x, start } => {
            let (r, c) = (node.value.rows(), node.value.cols());
            let src_cols = nodes[*x].value.cols();
            add_into_with(grads, nodes, *x, |acc| {
                for i in 0..r {
                    for j in 0..c {
                        acc[i * src_cols + start + j] += g[i * c + j];
                    }
                }
            });
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// For every flat index of `out`, the flat index of the broadcast source element.
fn broadcast_map(out: &[usize], src: &[usize]) -> Vec<usize> {
    let n: usize = out.iter().product();
    if out == src {
        return (0..n).collect();
    }
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for k in (0..rank).rev() {
        strides[k] = if src[k] == 1 { 0 } else { acc };
        acc *= src[k];
    }
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    for _ in 0..n {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for k in (0..rank).rev() {
            idx[k] += 1;
            if idx[k] < out[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    map
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<S> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<S>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    /// First element; intended for `1 × 1` results.
    pub fn item(&self) -> S {
        self.with_value(|t| t.data()[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self) -> Result<Gradients<S>> {
        let shape = self.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::shape("backward (scalar)", &shape, &[1, 1]));
        }
        self.tape.backward(*self, Tensor::ones(shape))
    }

    fn unary(&self, f: impl Fn(&Tensor<S>) -> Result<Tensor<S>>, op: Op<S>) -> Result<Var<'t, S>> {
        let value = self.with_value(f)?;
        Ok(self.tape.record(value, op))
    }

    fn map(&self, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var<'t, S>> {
        self.unary(|t| Ok(t.map(&f)), op)
    }

    fn binary_broadcast(
        &self,
        other: &Var<'t, S>,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var<'t, S>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(name, a.shape(), b.shape()))?;
            let ma = broadcast_map(&shape, a.shape());
            let mb = broadcast_map(&shape, b.shape());
            let data = ma.iter().zip(&mb).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect();
            Tensor::new(shape, data)?
        };
        Ok(self.tape.record(value, op))
    }

    pub fn matmul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            matmul_raw(a, b)
        };
        Ok(self.tape.record(value, Op::MatMul(self.id, other.id)))
    }

    /// Elementwise sum with broadcasting over unit dimensions.
    pub fn add(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary_broadcast(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary_broadcast(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Elementwise product with broadcasting over unit dimensions.
    pub fn mul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary_broadcast(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, factor: S) -> Result<Var<'t, S>> {
        self.map(|v| v * factor, Op::Scale(self.id, factor))
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!("{op}: axis {axis} out of range for {shape:?}")));
        }
        Ok(axis_split(&shape, axis))
    }

    fn reduce_shape(&self, axis: usize) -> Vec<usize> {
        let mut s = self.shape();
        s[axis] = 1;
        s
    }

    pub fn sum(&self, axis: usize) -> Result<Var<'t, S>> {
        let (outer, len, inner) = self.check_axis(axis, "sum")?;
        let shape = self.reduce_shape(axis);
        self.unary(
            |t| {
                let d = t.data();
                let data = (0..outer * inner)
                    .map(|k| {
                        let (o, i) = (k / inner, k % inner);
                        (0..len).map(|l| d[(o * len + l) * inner + i]).sum()
                    })
                    .collect();
                Tensor::new(shape.clone(), data)
            },
            Op::Sum { x: self.id, axis },
        )
    }

    pub fn mean(&self, axis: usize) -> Result<Var<'t, S>> {
        let (outer, len, inner) = self.check_axis(axis, "mean")?;
        if len == 0 {
            return Err(Error::EmptyAxis { op: "mean" });
        }
        let shape = self.reduce_shape(axis);
        let n = S::lit(len as f64);
        self.unary(
            |t| {
                let d = t.data();
                let data = (0..outer * inner)
                    .map(|k| {
                        let (o, i) = (k / inner, k % inner);
                        (0..len).map(|l| d[(o * len + l) * inner + i]).sum::<S>() / n
                    })
                    .collect();
                Tensor::new(shape.clone(), data)
            },
            Op::Mean { x: self.id, axis },
        )
    }

    /// Sum of every element, as a `1 × 1` tensor.
    pub fn sum_all(&self) -> Result<Var<'t, S>> {
        self.unary(|t| Ok(Tensor::scalar(t.data().iter().copied().sum())), Op::SumAll(self.id))
    }

    /// Maximum over an axis; the gradient flows to the first maximiser.
    pub fn max(&self, axis: usize) -> Result<Var<'t, S>> {
        let (outer, len, inner) = self.check_axis(axis, "max")?;
        if len == 0 {
            return Err(Error::EmptyAxis { op: "max" });
        }
        let shape = self.reduce_shape(axis);
        let (value, argmax) = self.with_value(|t| {
            let d = t.data();
            let mut vals = Vec::with_capacity(outer * inner);
            let mut arg = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = (o * len) * inner + i;
                    for l in 1..len {
                        let k = (o * len + l) * inner + i;
                        if d[k] > d[best] {
                            best = k;
                        }
                    }
                    vals.push(d[best]);
                    arg.push(best);
                }
            }
            (Tensor::new(shape, vals), arg)
        });
        Ok(self.tape.record(value?, Op::Max { x: self.id, argmax }))
    }

    pub fn tanh(&self) -> Result<Var<'t, S>> {
        self.map(|v| v.tanh(), Op::Tanh(self.id))
    }

    pub fn relu(&self) -> Result<Var<'t, S>> {
        self.map(|v| v.max(S::zero()), Op::Relu(self.id))
    }

    pub fn leaky_relu(&self, slope: S) -> Result<Var<'t, S>> {
        self.map(move |v| if v > S::zero() { v } else { v * slope }, Op::LeakyRelu(self.id, slope))
    }

    pub fn sigmoid(&self) -> Result<Var<'t, S>> {
        self.map(|v| S::one() / (S::one() + (-v).exp()), Op::Sigmoid(self.id))
    }

    /// `ln(clamp(x, lo, hi))`; no gradient flows through clamped entries.
    pub fn ln_clamped(&self, lo: S, hi: S) -> Result<Var<'t, S>> {
        self.map(move |v| v.max(lo).min(hi).ln(), Op::LnClamp { x: self.id, lo, hi })
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t, S>> {
        self.softmax_impl(axis, None)
    }

    /// Softmax where entries with `mask[k] == false` are excluded and output as zero.
    pub fn masked_softmax(&self, axis: usize, mask: &[bool]) -> Result<Var<'t, S>> {
        let shape = self.shape();
        if mask.len() != shape.iter().product::<usize>() {
            return Err(Error::shape("masked_softmax", &shape, &[mask.len()]));
        }
        self.softmax_impl(axis, Some(mask))
    }

    fn softmax_impl(&self, axis: usize, mask: Option<&[bool]>) -> Result<Var<'t, S>> {
        let (outer, len, inner) = self.check_axis(axis, "softmax")?;
        if len == 0 {
            return Err(Error::EmptyAxis { op: "softmax" });
        }
        self.unary(
            |t| {
                let d = t.data();
                let mut out = vec![S::zero(); d.len()];
                let keep = |k: usize| mask.is_none_or(|m| m[k]);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let mut hi = S::neg_infinity();
                        let mut any = false;
                        for l in 0..len {
                            if keep(idx(l)) {
                                hi = hi.max(d[idx(l)]);
                                any = true;
                            }
                        }
                        if !any {
                            return Err(Error::EmptyAxis { op: "masked_softmax" });
                        }
                        let mut z = S::zero();
                        for l in 0..len {
                            if keep(idx(l)) {
                                let e = (d[idx(l)] - hi).exp();
                                out[idx(l)] = e;
                                z += e;
                            }
                        }
                        for l in 0..len {
                            out[idx(l)] /= z;
                        }
                    }
                }
                Tensor::new(t.shape().to_vec(), out)
            },
            Op::Softmax { x: self.id, axis },
        )
    }

    /// Layer normalisation over the last axis; `gain` and `bias` hold one value per column.
    pub fn layer_norm(&self, gain: &Var<'t, S>, bias: &Var<'t, S>, eps: S) -> Result<Var<'t, S>> {
        let (value, xhat, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let (x, gv, bv) = (&nodes[self.id].value, &nodes[gain.id].value, &nodes[bias.id].value);
            let c = x.cols();
            if gv.len() != c || bv.len() != c || c == 0 {
                return Err(Error::shape("layer_norm", x.shape(), gv.shape()));
            }
            let rows = x.len() / c;
            let nf = S::lit(c as f64);
            let mut out = vec![S::zero(); x.len()];
            let mut xhat = vec![S::zero(); x.len()];
            let mut inv = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = &x.data()[r * c..(r + 1) * c];
                let mu = row.iter().copied().sum::<S>() / nf;
                let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / nf;
                let is = S::one() / (var + eps).sqrt();
                inv.push(is);
                for j in 0..c {
                    let h = (row[j] - mu) * is;
                    xhat[r * c + j] = h;
                    out[r * c + j] = h * gv.data()[j] + bv.data()[j];
                }
            }
            (Tensor::new(x.shape().to_vec(), out)?, xhat, inv)
        };
        Ok(self.tape.record(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
        ))
    }

    /// `self · w + b`, with `b` a single row broadcast over the rows of the product.
    pub fn affine(&self, w: &Var<'t, S>, b: &Var<'t, S>) -> Result<Var<'t, S>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, wv, bv) = (&nodes[self.id].value, &nodes[w.id].value, &nodes[b.id].value);
            if x.rank() != 2 || wv.rank() != 2 || x.cols() != wv.rows() {
                return Err(Error::shape("affine", x.shape(), wv.shape()));
            }
            if bv.len() != wv.cols() {
                return Err(Error::shape("affine bias", wv.shape(), bv.shape()));
            }
            let mut out = matmul_raw(x, wv);
            let n = wv.cols();
            for (k, v) in out.data_mut().iter_mut().enumerate() {
                *v += bv.data()[k % n];
            }
            out
        };
        Ok(self.tape.record(
            value,
            Op::Affine {
                x: self.id,
                w: w.id,
                b: b.id,
            },
        ))
    }

    pub fn transpose(&self) -> Result<Var<'t, S>> {
        self.unary(
            |t| {
                if t.rank() != 2 {
                    return Err(Error::shape("transpose", t.shape(), &[0, 0]));
                }
                let (r, c) = (t.rows(), t.cols());
                Tensor::new(vec![c, r], (0..r * c).map(|k| t.data()[(k % r) * c + k / r]).collect())
            },
            Op::Transpose(self.id),
        )
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<'t, S>> {
        let value = self.with_value(|t| {
            if t.rank() != 2 {
                return Err(Error::shape("gather_rows", t.shape(), &[0, 0]));
            }
            let c = t.cols();
            let mut data = Vec::with_capacity(rows.len() * c);
            for &r in rows {
                if r >= t.rows() {
                    return Err(Error::InvalidArgument(format!("gather_rows: row {r} out of range for {:?}", t.shape())));
                }
                data.extend_from_slice(t.row_slice(r));
            }
            Tensor::new(vec![rows.len(), c], data)
        })?;
        Ok(self.tape.record(
            value,
            Op::GatherRows {
                x: self.id,
                rows: rows.into(),
            },
        ))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t, S>> {
        self.unary(
            |t| {
                if t.rank() != 2 || start + len > t.cols() {
                    return Err(Error::shape("slice_cols", t.shape(), &[start, len]));
                }
                let r = t.rows();
                let data = (0..r).flat_map(|i| t.row_slice(i)[start..start + len].to_vec()).collect();
                Tensor::new(vec![r, len], data)
            },
            Op::SliceCols { x: self.id, start },
        )
    }
}

fn matmul_raw<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![S::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul shape")
}
