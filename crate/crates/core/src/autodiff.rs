//! A small static-graph reverse-mode differentiation engine.
//!
//! Graphs are declared first (leaves with fixed shapes, then ops that refer
//! to earlier nodes), evaluated with [`Graph::forward`] and differentiated
//! with [`Graph::backward`]. Node ids are handed out in insertion order,
//! which is therefore a topological order; backward walks it in reverse.
//!
//! Only the primitives the two language models need are provided. There is
//! no broadcasting other than [`Graph::add_row`] (row-vector bias).

use std::collections::HashMap;

use thiserror::Error;

use crate::tensor::{self, Tensor};

mod gradcheck;

pub use gradcheck::{check_cases, grad_check, grad_check_report, primitive_cases, relative_error, GradCase, GradCheckReport};

/// Additive mask value used before softmax.
pub const MASK_VALUE: f64 = -1e30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<[usize; 2]> },
    #[error("no value fed for input `{0}`")]
    MissingInput(String),
    #[error("{op}: index {index} out of range for {bound}")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("backward called before forward")]
    NotEvaluated,
    #[error("unknown node id {0}")]
    UnknownNode(usize),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { name: String, shape: [usize; 2] },
    Constant(Tensor),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Embedding { table: NodeId, ids: Vec<usize> },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols { src: NodeId, start: usize, len: usize },
    SliceRows { src: NodeId, start: usize, len: usize },
    Transpose(NodeId),
    MaskedFill { src: NodeId, mask: Vec<bool> },
    LayerNorm { src: NodeId, gain: Option<NodeId>, bias: Option<NodeId>, eps: f64 },
    CrossEntropy { log_probs: NodeId, targets: Vec<usize>, keep: Vec<bool> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Embedding { .. } => "embedding",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::Transpose(_) => "transpose",
            Op::MaskedFill { .. } => "masked_fill",
            Op::LayerNorm { .. } => "layer_norm",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    // layer norm: per-row inverse standard deviation
    cache: Option<Vec<f64>>,
}

/// Gradients of every leaf, keyed by leaf name.
pub type Gradients = HashMap<String, Tensor>;

/// Values fed to leaves by name.
pub type Feed<'a> = HashMap<&'a str, &'a Tensor>;

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    evaluated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.evaluated = false;
        self.nodes.push(Node { op, value: None, cache: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Declares a named leaf (input or parameter) of a fixed shape.
    pub fn input(&mut self, name: &str, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Leaf { name: name.to_string(), shape: [rows, cols] })
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    /// Adds a `1 × n` bias to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: NodeId, alpha: f64) -> NodeId {
        self.push(Op::Scale(a, alpha))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSoftmax(a))
    }

    /// Gathers rows `ids` of `table`.
    pub fn embedding(&mut self, table: NodeId, ids: Vec<usize>) -> NodeId {
        self.push(Op::Embedding { table, ids })
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        self.push(Op::ConcatCols(parts))
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        self.push(Op::ConcatRows(parts))
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::SliceCols { src, start, len })
    }

    pub fn slice_rows(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::SliceRows { src, start, len })
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a))
    }

    /// Adds [`MASK_VALUE`] wherever `mask` (row-major, same size as `src`) is true.
    pub fn masked_fill(&mut self, src: NodeId, mask: Vec<bool>) -> NodeId {
        self.push(Op::MaskedFill { src, mask })
    }

    /// Masks the strict upper triangle of a square score matrix.
    pub fn causal_mask(&mut self, src: NodeId, size: usize) -> NodeId {
        let mask = (0..size * size).map(|i| i % size > i / size).collect();
        self.masked_fill(src, mask)
    }

    /// Row-wise layer normalization, with optional `1 × n` gain and bias.
    pub fn layer_norm(&mut self, src: NodeId, gain: Option<NodeId>, bias: Option<NodeId>) -> NodeId {
        self.push(Op::LayerNorm { src, gain, bias, eps: 1e-5 })
    }

    /// Mean of `-log_probs[r, targets[r]]` over rows with `keep[r]`; a `1 × 1` node.
    pub fn cross_entropy(&mut self, log_probs: NodeId, targets: Vec<usize>, keep: Vec<bool>) -> NodeId {
        self.push(Op::CrossEntropy { log_probs, targets, keep })
    }

    pub fn last(&self) -> Option<NodeId> {
        self.nodes.len().checked_sub(1).map(NodeId)
    }

    /// Names and shapes of every declared leaf, in declaration order.
    pub fn leaves(&self) -> Vec<(&str, [usize; 2])> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Leaf { name, shape } => Some((name.as_str(), *shape)),
                _ => None,
            })
            .collect()
    }

    /// Sign of every ReLU input from the last forward pass.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => self.value(a),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
            .collect()
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.as_ref().expect("operands are evaluated before use")
    }

    /// Evaluates every node; returns the value of the last one.
    pub fn forward(&mut self, feed: &Feed<'_>) -> Result<&Tensor> {
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            let (value, cache) = self.eval_node(i, feed)?;
            self.nodes[i].value = Some(value);
            self.nodes[i].cache = cache;
        }
        self.evaluated = true;
        self.nodes.last().and_then(|n| n.value.as_ref()).ok_or(GraphError::NotEvaluated)
    }

    fn mismatch(&self, op: &Op, ids: &[NodeId]) -> GraphError {
        GraphError::ShapeMismatch {
            op: op.name(),
            shapes: ids.iter().map(|&id| self.val(id).shape()).collect(),
        }
    }

    fn eval_node(&self, i: usize, feed: &Feed<'_>) -> Result<(Tensor, Option<Vec<f64>>)> {
        let op = &self.nodes[i].op;
        for dep in deps(op) {
            if dep.0 >= i {
                return Err(GraphError::UnknownNode(dep.0));
            }
        }
        let out = match op {
            Op::Leaf { name, shape } => {
                let t = feed.get(name.as_str()).ok_or_else(|| GraphError::MissingInput(name.clone()))?;
                if t.shape() != *shape {
                    return Err(GraphError::ShapeMismatch { op: "leaf", shapes: vec![*shape, t.shape()] });
                }
                (*t).clone()
            }
            Op::Constant(t) => t.clone(),
            Op::MatMul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                if x.cols() != y.rows() {
                    return Err(self.mismatch(op, &[*a, *b]));
                }
                tensor::matmul(x, y)
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                if x.shape() != y.shape() {
                    return Err(self.mismatch(op, &[*a, *b]));
                }
                match op {
                    Op::Add(..) => x.zip_map(y, |p, q| p + q),
                    Op::Sub(..) => x.zip_map(y, |p, q| p - q),
                    _ => x.zip_map(y, |p, q| p * q),
                }
            }
            Op::AddRow(a, b) => {
                let (x, bias) = (self.val(*a), self.val(*b));
                if bias.rows() != 1 || bias.cols() != x.cols() {
                    return Err(self.mismatch(op, &[*a, *b]));
                }
                let mut out = x.clone();
                for r in 0..out.rows() {
                    for (v, b) in out.row_mut(r).iter_mut().zip(bias.data()) {
                        *v += b;
                    }
                }
                out
            }
            Op::Scale(a, alpha) => self.val(*a).map(|v| v * alpha),
            Op::Sigmoid(a) => self.val(*a).map(tensor::sigmoid),
            Op::Tanh(a) => self.val(*a).map(f64::tanh),
            Op::Relu(a) => self.val(*a).map(|v| v.max(0.0)),
            Op::Softmax(a) => tensor::softmax_rows(self.val(*a)),
            Op::LogSoftmax(a) => tensor::log_softmax_rows(self.val(*a)),
            Op::Embedding { table, ids } => {
                let t = self.val(*table);
                let mut out = Tensor::zeros(ids.len(), t.cols());
                for (r, &id) in ids.iter().enumerate() {
                    if id >= t.rows() {
                        return Err(GraphError::IndexOutOfRange { op: "embedding", index: id, bound: t.rows() });
                    }
                    out.row_mut(r).copy_from_slice(t.row(id));
                }
                out
            }
            Op::ConcatCols(parts) => {
                let rows = parts.first().map(|&p| self.val(p).rows()).unwrap_or(0);
                if parts.iter().any(|&p| self.val(p).rows() != rows) {
                    return Err(self.mismatch(op, parts));
                }
                let cols = parts.iter().map(|&p| self.val(p).cols()).sum();
                let mut out = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let mut c0 = 0;
                    for &p in parts {
                        let src = self.val(p);
                        out.row_mut(r)[c0..c0 + src.cols()].copy_from_slice(src.row(r));
                        c0 += src.cols();
                    }
                }
                out
            }
            Op::ConcatRows(parts) => {
                let cols = parts.first().map(|&p| self.val(p).cols()).unwrap_or(0);
                if parts.iter().any(|&p| self.val(p).cols() != cols) {
                    return Err(self.mismatch(op, parts));
                }
                let mut data = Vec::new();
                for &p in parts {
                    data.extend_from_slice(self.val(p).data());
                }
                let rows = data.len() / cols.max(1);
                Tensor::from_vec(if cols == 0 { 0 } else { rows }, cols, data)
            }
            Op::SliceCols { src, start, len } => {
                let x = self.val(*src);
                if start + len > x.cols() {
                    return Err(self.mismatch(op, &[*src]));
                }
                Tensor::from_fn(x.rows(), *len, |r, c| x.get(r, start + c))
            }
            Op::SliceRows { src, start, len } => {
                let x = self.val(*src);
                if start + len > x.rows() {
                    return Err(self.mismatch(op, &[*src]));
                }
                Tensor::from_vec(*len, x.cols(), x.data()[start * x.cols()..(start + len) * x.cols()].to_vec())
            }
            Op::Transpose(a) => self.val(*a).transpose(),
            Op::MaskedFill { src, mask } => {
                let x = self.val(*src);
                if mask.len() != x.len() {
                    return Err(self.mismatch(op, &[*src]));
                }
                let mut out = x.clone();
                for (v, &m) in out.data_mut().iter_mut().zip(mask) {
                    if m {
                        *v += MASK_VALUE;
                    }
                }
                out
            }
            Op::LayerNorm { src, gain, bias, eps } => {
                let x = self.val(*src);
                for p in gain.iter().chain(bias.iter()) {
                    let t = self.val(*p);
                    if t.rows() != 1 || t.cols() != x.cols() {
                        return Err(self.mismatch(op, &[*src, *p]));
                    }
                }
                let n = x.cols() as f64;
                let mut out = x.clone();
                let mut inv_std = Vec::with_capacity(x.rows());
                for r in 0..x.rows() {
                    let row = out.row_mut(r);
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let is = 1.0 / (var + eps).sqrt();
                    for v in row.iter_mut() {
                        *v = (*v - mean) * is;
                    }
                    inv_std.push(is);
                }
                // out currently holds x̂; the cache keeps 1/σ per row
                if gain.is_some() || bias.is_some() {
                    for r in 0..out.rows() {
                        for c in 0..out.cols() {
                            let mut v = out.get(r, c);
                            if let Some(g) = gain {
                                v *= self.val(*g).get(0, c);
                            }
                            if let Some(b) = bias {
                                v += self.val(*b).get(0, c);
                            }
                            out.set(r, c, v);
                        }
                    }
                }
                return Ok((out, Some(inv_std)));
            }
            Op::CrossEntropy { log_probs, targets, keep } => {
                let lp = self.val(*log_probs);
                if targets.len() != lp.rows() || keep.len() != lp.rows() {
                    return Err(self.mismatch(op, &[*log_probs]));
                }
                let mut total = 0.0;
                let mut count = 0usize;
                for (r, (&t, &k)) in targets.iter().zip(keep).enumerate() {
                    if !k {
                        continue;
                    }
                    if t >= lp.cols() {
                        return Err(GraphError::IndexOutOfRange { op: "cross_entropy", index: t, bound: lp.cols() });
                    }
                    total -= lp.get(r, t);
                    count += 1;
                }
                Tensor::scalar(if count == 0 { 0.0 } else { total / count as f64 })
            }
        };
        Ok((out, None))
    }

    /// Propagates `upstream` (the gradient of some scalar w.r.t. `output`)
    /// back to every leaf. Fan-out contributions are summed.
    pub fn backward(&self, output: NodeId, upstream: &Tensor) -> Result<Gradients> {
        if !self.evaluated {
            return Err(GraphError::NotEvaluated);
        }
        if output.0 >= self.nodes.len() {
            return Err(GraphError::UnknownNode(output.0));
        }
        if self.val(output).shape() != upstream.shape() {
            return Err(GraphError::ShapeMismatch {
                op: "backward",
                shapes: vec![self.val(output).shape(), upstream.shape()],
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(upstream.clone());
        let mut result = Gradients::new();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { name, .. } => {
                    match result.get_mut(name) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            result.insert(name.clone(), g);
                        }
                    }
                }
                Op::Constant(_) => {}
                Op::MatMul(a, b) => {
                    let (x, y) = (self.val(*a), self.val(*b));
                    accumulate_with(&mut grads, *a, x.shape(), |acc| tensor::matmul_nt_acc(&g, y, acc));
                    accumulate_with(&mut grads, *b, y.shape(), |acc| tensor::matmul_tn_acc(x, &g, acc));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.val(*a), self.val(*b));
                    accumulate(&mut grads, *a, &g.zip_map(y, |p, q| p * q));
                    accumulate(&mut grads, *b, &g.zip_map(x, |p, q| p * q));
                }
                Op::AddRow(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *b, &gb);
                    accumulate(&mut grads, *a, &g);
                }
                Op::Scale(a, alpha) => accumulate(&mut grads, *a, &g.map(|v| v * alpha)),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    accumulate(&mut grads, *a, &g.zip_map(y, |d, s| d * s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    accumulate(&mut grads, *a, &g.zip_map(y, |d, t| d * (1.0 - t * t)));
                }
                Op::Relu(a) => {
                    let x = self.val(*a);
                    accumulate(&mut grads, *a, &g.zip_map(x, |d, v| if v > 0.0 { d } else { 0.0 }));
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(d, s)| d * s).sum();
                        for c in 0..y.cols() {
                            dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, &dx);
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for c in 0..y.cols() {
                            dx.set(r, c, g.get(r, c) - y.get(r, c).exp() * total);
                        }
                    }
                    accumulate(&mut grads, *a, &dx);
                }
                Op::Embedding { table, ids } => {
                    let shape = self.val(*table).shape();
                    accumulate_with(&mut grads, *table, shape, |acc| {
                        for (r, &id) in ids.iter().enumerate() {
                            for (a, v) in acc.row_mut(id).iter_mut().zip(g.row(r)) {
                                *a += v;
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.val(p).cols();
                        let part = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, c0 + c));
                        accumulate(&mut grads, p, &part);
                        c0 += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let h = self.val(p).rows();
                        let part = Tensor::from_vec(h, g.cols(), g.data()[r0 * g.cols()..(r0 + h) * g.cols()].to_vec());
                        accumulate(&mut grads, p, &part);
                        r0 += h;
                    }
                }
                Op::SliceCols { src, start, len } => {
                    let shape = self.val(*src).shape();
                    accumulate_with(&mut grads, *src, shape, |acc| {
                        for r in 0..g.rows() {
                            for c in 0..*len {
                                let v = acc.get(r, start + c) + g.get(r, c);
                                acc.set(r, start + c, v);
                            }
                        }
                    });
                }
                Op::SliceRows { src, start, .. } => {
                    let shape = self.val(*src).shape();
                    accumulate_with(&mut grads, *src, shape, |acc| {
                        let cols = acc.cols();
                        let dst = &mut acc.data_mut()[start * cols..start * cols + g.len()];
                        for (a, v) in dst.iter_mut().zip(g.data()) {
                            *a += v;
                        }
                    });
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, &g.transpose()),
                Op::MaskedFill { src, .. } => accumulate(&mut grads, *src, &g),
                Op::LayerNorm { src, gain, bias, .. } => {
                    let inv_std = node.cache.as_ref().unwrap();
                    let x = self.val(*src);
                    let n = x.cols() as f64;
                    let mut dx = Tensor::zeros(x.rows(), x.cols());
                    let mut dgain = gain.map(|_| Tensor::zeros(1, x.cols()));
                    let mut dbias = bias.map(|_| Tensor::zeros(1, x.cols()));
                    for r in 0..x.rows() {
                        let row = x.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std[r]).collect();
                        let dxhat: Vec<f64> = (0..x.cols())
                            .map(|c| match gain {
                                Some(gid) => g.get(r, c) * self.val(*gid).get(0, c),
                                None => g.get(r, c),
                            })
                            .collect();
                        if let Some(dg) = dgain.as_mut() {
                            for c in 0..x.cols() {
                                dg.data_mut()[c] += g.get(r, c) * xhat[c];
                            }
                        }
                        if let Some(db) = dbias.as_mut() {
                            for c in 0..x.cols() {
                                db.data_mut()[c] += g.get(r, c);
                            }
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n;
                        let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..x.cols() {
                            dx.set(r, c, inv_std[r] * (dxhat[c] - mean_d - xhat[c] * mean_dx));
                        }
                    }
                    accumulate(&mut grads, *src, &dx);
                    if let (Some(gid), Some(dg)) = (gain, dgain) {
                        accumulate(&mut grads, *gid, &dg);
                    }
                    if let (Some(bid), Some(db)) = (bias, dbias) {
                        accumulate(&mut grads, *bid, &db);
                    }
                }
                Op::CrossEntropy { log_probs, targets, keep } => {
                    let lp = self.val(*log_probs);
                    let count = keep.iter().filter(|&&k| k).count();
                    if count > 0 {
                        let scale = -g.get(0, 0) / count as f64;
                        accumulate_with(&mut grads, *log_probs, lp.shape(), |acc| {
                            for (r, (&t, &k)) in targets.iter().zip(keep).enumerate() {
                                if k {
                                    let v = acc.get(r, t) + scale;
                                    acc.set(r, t, v);
                                }
                            }
                        });
                    }
                }
            }
        }
        Ok(result)
    }
}

fn deps(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf { .. } | Op::Constant(_) => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Relu(a)
        | Op::Softmax(a)
        | Op::LogSoftmax(a)
        | Op::Transpose(a) => vec![*a],
        Op::Embedding { table, .. } => vec![*table],
        Op::ConcatCols(p) | Op::ConcatRows(p) => p.clone(),
        Op::SliceCols { src, .. } | Op::SliceRows { src, .. } | Op::MaskedFill { src, .. } => vec![*src],
        Op::LayerNorm { src, gain, bias, .. } => {
            let mut v = vec![*src];
            v.extend(gain.iter().chain(bias.iter()).copied());
            v
        }
        Op::CrossEntropy { log_probs, .. } => vec![*log_probs],
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: &Tensor) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn accumulate_with(grads: &mut [Option<Tensor>], id: NodeId, shape: [usize; 2], f: impl FnOnce(&mut Tensor)) {
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shape[0], shape[1]));
    }
    f(slot.as_mut().unwrap());
}
