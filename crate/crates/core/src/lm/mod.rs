//! GRU and causal Transformer language models.
//!
//! Both architectures share the layout `embedding → body → output layer →
//! log-softmax`. The body is a stack of GRU layers followed by a tanh
//! projection, or a stack of post-norm Transformer layers (multi-head causal
//! self-attention and a ReLU feed-forward block, each wrapped in a residual
//! connection and an affine-free layer norm).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check_report, Feed, GradCase, GradCheckReport, Graph, NodeId};
use crate::corpus::{with_boundaries, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::{seeded_rng, STREAM_EMBEDDING, STREAM_WEIGHTS};

mod gru;
mod io;
pub(crate) mod surprisal;
mod transformer;

pub use gru::GruStepper;
pub use io::{checkpoint_file_name, Precision};
pub use transformer::position_encoding;
pub use surprisal::{avg_log_prob, surprisal_of, SurprisalRow, SurprisalTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gru,
    Transformer,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gru => "gru",
            ModelKind::Transformer => "transformer",
        }
    }

    /// Initial learning rate used for this architecture.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            ModelKind::Gru => 0.02,
            ModelKind::Transformer => 0.005,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(ModelKind::Gru),
            "transformer" | "tf" => Ok(ModelKind::Transformer),
            other => Err(Error::Invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Architecture hyper-parameters. Fields that do not apply to `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ModelKind,
    pub layers: usize,
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub gru_proj: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Sinusoidal position encodings (Transformer only).
    #[serde(default = "yes")]
    pub position_encoding: bool,
}

fn yes() -> bool {
    true
}

impl ArchitectureSpec {
    /// Full-size GRU: 400-d embeddings, 500-unit GRU layers, 400-unit tanh projection.
    pub fn gru(vocab_size: usize, layers: usize) -> Self {
        Self {
            kind: ModelKind::Gru,
            layers,
            embed_dim: 400,
            gru_hidden: 500,
            gru_proj: 400,
            heads: 8,
            ffn_dim: 1024,
            vocab_size,
            position_encoding: true,
        }
    }

    /// Full-size Transformer: 400-d embeddings, 8 heads, 1024-unit feed-forward.
    pub fn transformer(vocab_size: usize, layers: usize) -> Self {
        Self { kind: ModelKind::Transformer, ..Self::gru(vocab_size, layers) }
    }

    pub fn new(kind: ModelKind, vocab_size: usize, layers: usize) -> Self {
        match kind {
            ModelKind::Gru => Self::gru(vocab_size, layers),
            ModelKind::Transformer => Self::transformer(vocab_size, layers),
        }
    }

    /// `gru1`, `transformer2`, ...
    pub fn label(&self) -> String {
        format!("{}{}", self.kind, self.layers)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("{}: {m}", self.label())));
        if self.layers == 0 {
            return bad("at least one layer required");
        }
        if self.vocab_size <= NUM_SPECIALS {
            return bad("vocabulary has no words");
        }
        if self.embed_dim == 0 {
            return bad("embedding dimension must be positive");
        }
        match self.kind {
            ModelKind::Gru if self.gru_hidden == 0 || self.gru_proj == 0 => bad("GRU sizes must be positive"),
            ModelKind::Transformer if self.heads == 0 || self.embed_dim % self.heads != 0 => {
                bad("embedding dimension must be divisible by the number of heads")
            }
            ModelKind::Transformer if self.ffn_dim == 0 => bad("feed-forward size must be positive"),
            _ => Ok(()),
        }
    }

    fn output_input_dim(&self) -> usize {
        match self.kind {
            ModelKind::Gru => self.gru_proj,
            ModelKind::Transformer => self.embed_dim,
        }
    }

    /// Every parameter tensor, in a fixed order.
    pub fn parameter_shapes(&self) -> Vec<(String, [usize; 2])> {
        let v = self.vocab_size;
        let e = self.embed_dim;
        let mut shapes = vec![("embedding".to_string(), [v, e])];
        match self.kind {
            ModelKind::Gru => {
                let h = self.gru_hidden;
                for l in 0..self.layers {
                    let input = if l == 0 { e } else { h };
                    shapes.push((format!("gru{l}.w_ih"), [input, 3 * h]));
                    shapes.push((format!("gru{l}.w_hh"), [h, 3 * h]));
                    shapes.push((format!("gru{l}.b_ih"), [1, 3 * h]));
                    shapes.push((format!("gru{l}.b_hh"), [1, 3 * h]));
                }
                shapes.push(("proj.w".to_string(), [h, self.gru_proj]));
                shapes.push(("proj.b".to_string(), [1, self.gru_proj]));
            }
            ModelKind::Transformer => {
                let f = self.ffn_dim;
                for l in 0..self.layers {
                    shapes.push((format!("tf{l}.w_qkv"), [e, 3 * e]));
                    shapes.push((format!("tf{l}.b_qkv"), [1, 3 * e]));
                    shapes.push((format!("tf{l}.w_o"), [e, e]));
                    shapes.push((format!("tf{l}.b_o"), [1, e]));
                    shapes.push((format!("tf{l}.w_ff1"), [e, f]));
                    shapes.push((format!("tf{l}.b_ff1"), [1, f]));
                    shapes.push((format!("tf{l}.w_ff2"), [f, e]));
                    shapes.push((format!("tf{l}.b_ff2"), [1, e]));
                }
            }
        }
        shapes.push(("out.w".to_string(), [self.output_input_dim(), v]));
        shapes.push(("out.b".to_string(), [1, v]));
        shapes
    }
}

/// Total number of learnable scalars.
pub fn count_parameters(spec: &ArchitectureSpec) -> usize {
    spec.parameter_shapes().iter().map(|(_, [r, c])| r * c).sum()
}

/// Named parameters plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub spec: ArchitectureSpec,
    pub tensors: BTreeMap<String, Tensor>,
    pub seed: u64,
    pub sentences_seen: u64,
    pub checkpoint_tag: String,
}

/// Deterministic initialization.
///
/// The embedding comes from its own random stream so that models of either
/// kind built from the same seed start with the same embedding table.
/// Weight matrices are `U(-1/√fan_in, 1/√fan_in)`, biases zero, embeddings
/// `U(-0.1, 0.1)`.
pub fn init_model(spec: &ArchitectureSpec, seed: u64) -> Result<ModelCheckpoint> {
    spec.validate()?;
    let mut emb_rng = seeded_rng(seed, STREAM_EMBEDDING);
    let mut w_rng = seeded_rng(seed, STREAM_WEIGHTS);
    let mut tensors = BTreeMap::new();
    for (name, [rows, cols]) in spec.parameter_shapes() {
        let t = if name == "embedding" {
            Tensor::from_fn(rows, cols, |_, _| emb_rng.random_range(-0.1..0.1))
        } else if rows == 1 {
            Tensor::zeros(rows, cols)
        } else {
            let bound = 1.0 / (rows as f64).sqrt();
            Tensor::from_fn(rows, cols, |_, _| w_rng.random_range(-bound..bound))
        };
        tensors.insert(name, t);
    }
    Ok(ModelCheckpoint { spec: spec.clone(), tensors, seed, sentences_seen: 0, checkpoint_tag: "init".into() })
}

impl ModelCheckpoint {
    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    fn feed(&self) -> Feed<'_> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v)).collect()
    }

    /// Checks tensor names and shapes against the spec.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let shapes = self.spec.parameter_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::Invalid(format!(
                "checkpoint has {} tensors, {} expects {}",
                self.tensors.len(),
                self.spec.label(),
                shapes.len()
            )));
        }
        for (name, shape) in shapes {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == shape => {}
                Some(t) => {
                    return Err(Error::Invalid(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())))
                }
                None => return Err(Error::Invalid(format!("checkpoint lacks tensor {name}"))),
            }
        }
        Ok(())
    }

    /// Row `t` is `log P(· | token_ids[..=t])`. One row per input token.
    pub fn forward_log_probs(&self, token_ids: &[usize]) -> Result<Tensor> {
        let mut lm = LmGraph::build(&self.spec, &[token_ids])?;
        lm.graph.forward(&self.feed())?;
        Ok(lm.graph.value(lm.log_probs).expect("forward evaluated").clone())
    }

    /// Per-word surprisal (nats) for `words`, followed by that of EOS.
    pub fn surprisal(&self, words: &[usize]) -> Result<Vec<f64>> {
        let seq = with_boundaries(words);
        let lp = self.forward_log_probs(&seq[..seq.len() - 1])?;
        Ok((1..seq.len()).map(|t| -lp.get(t - 1, seq[t])).collect())
    }

    /// Mean next-token cross-entropy over the given sequences and its gradient.
    pub fn loss_and_gradients(&self, sequences: &[&[usize]]) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut lm = LmGraph::build_training(&self.spec, sequences)?;
        let loss = lm.graph.forward(&self.feed())?.get(0, 0);
        let loss_node = lm.loss.expect("training graph has a loss");
        let grads = lm.graph.backward(loss_node, &Tensor::scalar(1.0))?;
        let grads = grads.into_iter().collect();
        Ok((loss, grads))
    }
}

/// A graph over a set of sequences, with the row layout of its output.
pub struct LmGraph {
    pub graph: Graph,
    pub log_probs: NodeId,
    /// `(sequence index, position)` for each output row.
    pub rows: Vec<(usize, usize)>,
    pub loss: Option<NodeId>,
}

impl LmGraph {
    /// Log-probabilities after every token of every sequence.
    pub fn build(spec: &ArchitectureSpec, sequences: &[&[usize]]) -> Result<Self> {
        spec.validate()?;
        for seq in sequences {
            if let Some(&id) = seq.iter().find(|&&id| id >= spec.vocab_size) {
                return Err(Error::TokenOutOfRange { id, vocab: spec.vocab_size });
            }
        }
        let mut graph = Graph::new();
        let params: BTreeMap<String, NodeId> = spec
            .parameter_shapes()
            .into_iter()
            .map(|(name, [r, c])| {
                let id = graph.input(&name, r, c);
                (name, id)
            })
            .collect();
        let (hidden, rows) = match spec.kind {
            ModelKind::Gru => gru::build(&mut graph, spec, &params, sequences),
            ModelKind::Transformer => transformer::build(&mut graph, spec, &params, sequences),
        };
        let logits = graph.matmul(hidden, params["out.w"]);
        let logits = graph.add_row(logits, params["out.b"]);
        let log_probs = graph.log_softmax(logits);
        Ok(Self { graph, log_probs, rows, loss: None })
    }

    /// Next-token loss over full `BOS … EOS` sequences: inputs drop the last
    /// token, targets drop the first.
    pub fn build_training(spec: &ArchitectureSpec, sequences: &[&[usize]]) -> Result<Self> {
        if sequences.iter().any(|s| s.len() < 2) {
            return Err(Error::Invalid("training sequences need at least two tokens".into()));
        }
        let inputs: Vec<&[usize]> = sequences.iter().map(|s| &s[..s.len() - 1]).collect();
        let mut lm = Self::build(spec, &inputs)?;
        let targets: Vec<usize> = lm.rows.iter().map(|&(b, t)| sequences[b][t + 1]).collect();
        let keep = vec![true; targets.len()];
        lm.loss = Some(lm.graph.cross_entropy(lm.log_probs, targets, keep));
        Ok(lm)
    }
}

/// A single GRU step and a single causal attention block, for gradient checks.
pub fn composite_cases() -> Vec<GradCase> {
    let gru_step = GradCase::new("gru_step", |g| {
        let (e, h) = (3, 4);
        let params: BTreeMap<String, NodeId> = [("w_ih", e, 3 * h), ("w_hh", h, 3 * h), ("b_ih", 1, 3 * h), ("b_hh", 1, 3 * h)]
            .into_iter()
            .map(|(n, r, c)| {
                let name = format!("gru0.{n}");
                let id = g.input(&name, r, c);
                (name, id)
            })
            .collect();
        let x = g.input("x", 2, e);
        let prev = g.input("h", 2, h);
        gru::cell(g, &params, 0, h, x, prev)
    });
    let attention = GradCase::new("attention", |g| {
        let spec = ArchitectureSpec { embed_dim: 4, heads: 2, ..ArchitectureSpec::transformer(4, 1) };
        let x = g.input("x", 5, 4);
        let w = g.input("w_qkv", 4, 12);
        let b = g.input("b_qkv", 1, 12);
        let a = transformer::self_attention(g, &spec, w, b, x, &[&[0; 5]]);
        let r = g.add(x, a);
        g.layer_norm(r, None, None)
    });
    vec![gru_step, attention]
}

/// Gradient check of the mean next-token loss over `probes` random points.
///
/// Each probe draws every parameter from `U(-0.5, 0.5)` and a random
/// four-word sentence (five input positions).
pub fn check_loss_gradients(spec: &ArchitectureSpec, probes: usize, seed: u64, h: f64) -> Result<GradCheckReport> {
    let mut rng = seeded_rng(seed, 0);
    let mut total = GradCheckReport { max_error: 0.0, components: 0, on_kink: 0 };
    for _ in 0..probes {
        let values: std::collections::HashMap<String, Tensor> = spec
            .parameter_shapes()
            .into_iter()
            .map(|(name, [r, c])| (name, Tensor::from_fn(r, c, |_, _| rng.random_range(-0.5..0.5))))
            .collect();
        let words: Vec<usize> = (0..4).map(|_| rng.random_range(NUM_SPECIALS..spec.vocab_size)).collect();
        let seq = with_boundaries(&words);
        let mut lm = LmGraph::build_training(spec, &[&seq])?;
        let loss = lm.loss.expect("training graph has a loss");
        let names: Vec<&str> = values.keys().map(String::as_str).collect();
        let rep = grad_check_report(&mut lm.graph, loss, &values, &names, &Tensor::scalar(1.0), h)?;
        total.max_error = total.max_error.max(rep.max_error);
        total.components += rep.components;
        total.on_kink += rep.on_kink;
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
