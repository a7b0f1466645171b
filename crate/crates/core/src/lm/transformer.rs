use std::collections::BTreeMap;

use crate::autodiff::{Graph, NodeId};
use crate::tensor::Tensor;

use super::ArchitectureSpec;

/// Sinusoidal position encodings for positions `0..len`.
pub fn position_encoding(len: usize, dim: usize) -> Tensor {
    Tensor::from_fn(len, dim, |pos, c| {
        let i = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / dim as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Post-norm causal Transformer over packed sequences (rows are sequence-major).
pub(super) fn build(
    g: &mut Graph,
    spec: &ArchitectureSpec,
    params: &BTreeMap<String, NodeId>,
    sequences: &[&[usize]],
) -> (NodeId, Vec<(usize, usize)>) {
    let e = spec.embed_dim;
    let ids: Vec<usize> = sequences.iter().flat_map(|s| s.iter().copied()).collect();
    let rows: Vec<(usize, usize)> = sequences
        .iter()
        .enumerate()
        .flat_map(|(b, s)| (0..s.len()).map(move |t| (b, t)))
        .collect();

    let emb = g.embedding(params["embedding"], ids);
    let mut x = g.scale(emb, (e as f64).sqrt());
    if spec.position_encoding {
        let mut pe = Vec::with_capacity(rows.len() * e);
        for s in sequences {
            pe.extend_from_slice(position_encoding(s.len(), e).data());
        }
        let pe = g.constant(Tensor::from_vec(rows.len(), e, pe));
        x = g.add(x, pe);
    }

    for l in 0..spec.layers {
        let p = |name: &str| params[&format!("tf{l}.{name}")];
        let attn = self_attention(g, spec, p("w_qkv"), p("b_qkv"), x, sequences);
        let attn = g.matmul(attn, p("w_o"));
        let attn = g.add_row(attn, p("b_o"));
        let res = g.add(x, attn);
        x = g.layer_norm(res, None, None);

        let ff = g.matmul(x, p("w_ff1"));
        let ff = g.add_row(ff, p("b_ff1"));
        let ff = g.relu(ff);
        let ff = g.matmul(ff, p("w_ff2"));
        let ff = g.add_row(ff, p("b_ff2"));
        let res = g.add(x, ff);
        x = g.layer_norm(res, None, None);
    }
    (x, rows)
}

pub(super) fn self_attention(
    g: &mut Graph,
    spec: &ArchitectureSpec,
    w_qkv: NodeId,
    b_qkv: NodeId,
    x: NodeId,
    sequences: &[&[usize]],
) -> NodeId {
    let e = spec.embed_dim;
    let dh = e / spec.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let qkv = g.matmul(x, w_qkv);
    let key_free = g.constant(Tensor::from_fn(1, 3 * e, |_, c| if (e..2 * e).contains(&c) { 0.0 } else { 1.0 }));
    let b_qkv = g.mul(b_qkv, key_free);
    let qkv = g.add_row(qkv, b_qkv);

    let mut per_sequence = Vec::with_capacity(sequences.len());
    let mut offset = 0;
    for s in sequences {
        let len = s.len();
        let block = g.slice_rows(qkv, offset, len);
        offset += len;
        let mut heads = Vec::with_capacity(spec.heads);
        for h in 0..spec.heads {
            let q = g.slice_cols(block, h * dh, dh);
            let k = g.slice_cols(block, e + h * dh, dh);
            let v = g.slice_cols(block, 2 * e + h * dh, dh);
            let kt = g.transpose(k);
            let scores = g.matmul(q, kt);
            let scores = g.scale(scores, scale);
            let scores = g.causal_mask(scores, len);
            let weights = g.softmax(scores);
            heads.push(g.matmul(weights, v));
        }
        per_sequence.push(g.concat_cols(heads));
    }
    g.concat_rows(per_sequence)
}
