use std::collections::BTreeMap;

use crate::autodiff::{Graph, NodeId};
use crate::tensor::{self, Tensor};

use super::{ArchitectureSpec, ModelCheckpoint};

// Gate column blocks in w_ih / w_hh / biases: reset, update, candidate.

/// Unrolls the GRU stack over a batch of variable-length sequences.
///
/// Sequences are processed longest first so that the sequences still active
/// at step `t` form a row prefix of the hidden state. Output rows are in
/// time-major order.
pub(super) fn build(
    g: &mut Graph,
    spec: &ArchitectureSpec,
    params: &BTreeMap<String, NodeId>,
    sequences: &[&[usize]],
) -> (NodeId, Vec<(usize, usize)>) {
    let h = spec.gru_hidden;
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.sort_by_key(|&b| std::cmp::Reverse(sequences[b].len()));
    let t_max = order.first().map(|&b| sequences[b].len()).unwrap_or(0);

    let mut state: Vec<NodeId> = (0..spec.layers)
        .map(|_| g.constant(Tensor::zeros(order.len(), h)))
        .collect();
    let mut state_rows = order.len();
    let mut outputs = Vec::with_capacity(t_max);
    let mut rows = Vec::new();

    for t in 0..t_max {
        let active: Vec<usize> = order.iter().copied().filter(|&b| sequences[b].len() > t).collect();
        let n = active.len();
        let ids = active.iter().map(|&b| sequences[b][t]).collect();
        let mut x = g.embedding(params["embedding"], ids);
        for (l, prev_state) in state.iter_mut().enumerate() {
            let mut prev = *prev_state;
            if n < state_rows {
                prev = g.slice_rows(prev, 0, n);
            }
            let next = cell(g, params, l, h, x, prev);
            *prev_state = next;
            x = next;
        }
        state_rows = n;
        outputs.push(x);
        rows.extend(active.iter().map(|&b| (b, t)));
    }

    let stacked = g.concat_rows(outputs);
    let proj = g.matmul(stacked, params["proj.w"]);
    let proj = g.add_row(proj, params["proj.b"]);
    (g.tanh(proj), rows)
}

pub(super) fn cell(g: &mut Graph, params: &BTreeMap<String, NodeId>, layer: usize, h: usize, x: NodeId, prev: NodeId) -> NodeId {
    let p = |name: &str| params[&format!("gru{layer}.{name}")];
    let gi = g.matmul(x, p("w_ih"));
    let gi = g.add_row(gi, p("b_ih"));
    let gh = g.matmul(prev, p("w_hh"));
    let gh = g.add_row(gh, p("b_hh"));

    let (gi_r, gh_r) = (g.slice_cols(gi, 0, h), g.slice_cols(gh, 0, h));
    let (gi_z, gh_z) = (g.slice_cols(gi, h, h), g.slice_cols(gh, h, h));
    let (gi_n, gh_n) = (g.slice_cols(gi, 2 * h, h), g.slice_cols(gh, 2 * h, h));

    let r = g.add(gi_r, gh_r);
    let r = g.sigmoid(r);
    let z = g.add(gi_z, gh_z);
    let z = g.sigmoid(z);
    let rn = g.mul(r, gh_n);
    let n = g.add(gi_n, rn);
    let n = g.tanh(n);
    // h' = (1 - z) n + z h = n + z (h - n)
    let diff = g.sub(prev, n);
    let zd = g.mul(z, diff);
    g.add(n, zd)
}

/// Evaluates a GRU model one token at a time, carrying the hidden state.
pub struct GruStepper<'a> {
    model: &'a ModelCheckpoint,
    state: Vec<Tensor>,
}

impl<'a> GruStepper<'a> {
    pub fn new(model: &'a ModelCheckpoint) -> Self {
        assert_eq!(model.spec.kind, super::ModelKind::Gru, "GruStepper needs a GRU checkpoint");
        let h = model.spec.gru_hidden;
        Self { model, state: vec![Tensor::zeros(1, h); model.spec.layers] }
    }

    /// Feeds one token and returns `log P(· | tokens so far)` as a `1 × V` row.
    pub fn step(&mut self, token: usize) -> Tensor {
        let m = self.model;
        let h = m.spec.gru_hidden;
        let mut x = Tensor::row_vector(m.tensor("embedding").row(token).to_vec());
        for l in 0..m.spec.layers {
            let name = |s: &str| format!("gru{l}.{s}");
            let gi = add_bias(tensor::matmul(&x, m.tensor(&name("w_ih"))), m.tensor(&name("b_ih")));
            let gh = add_bias(tensor::matmul(&self.state[l], m.tensor(&name("w_hh"))), m.tensor(&name("b_hh")));
            let prev = &self.state[l];
            let next = Tensor::from_fn(1, h, |_, j| {
                let r = tensor::sigmoid(gi.get(0, j) + gh.get(0, j));
                let z = tensor::sigmoid(gi.get(0, h + j) + gh.get(0, h + j));
                let n = (gi.get(0, 2 * h + j) + r * gh.get(0, 2 * h + j)).tanh();
                n + z * (prev.get(0, j) - n)
            });
            self.state[l] = next.clone();
            x = next;
        }
        let proj = add_bias(tensor::matmul(&x, m.tensor("proj.w")), m.tensor("proj.b")).map(f64::tanh);
        let logits = add_bias(tensor::matmul(&proj, m.tensor("out.w")), m.tensor("out.b"));
        tensor::log_softmax_rows(&logits)
    }
}

fn add_bias(mut x: Tensor, b: &Tensor) -> Tensor {
    for (v, bv) in x.data_mut().iter_mut().zip(b.data()) {
        *v += bv;
    }
    x
}
