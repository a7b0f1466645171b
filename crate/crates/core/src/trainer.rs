//! Minibatch SGD with classical momentum, a stepwise learning-rate decay
//! and checkpoints at fixed sentence counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{batches, SentenceCorpus};
use crate::error::{Error, Result};
use crate::lm::{init_model, ArchitectureSpec, ModelCheckpoint};
use crate::tensor::Tensor;

/// Sentence counts at which the full-scale runs are checkpointed.
pub const DEFAULT_LADDER: [u64; 8] = [1_000, 3_000, 10_000, 30_000, 100_000, 300_000, 1_000_000, 3_000_000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub spec: ArchitectureSpec,
    pub initial_lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub checkpoint_ladder: Vec<u64>,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale defaults: two epochs, batches of ten, momentum 0.9, the
    /// architecture's learning rate and the full ladder.
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Self {
        Self {
            initial_lr: spec.kind.default_learning_rate(),
            spec,
            momentum: 0.9,
            epochs: 2,
            batch_size: 10,
            checkpoint_ladder: DEFAULT_LADDER.to_vec(),
            seed,
        }
    }

    pub fn validate(&self, corpus_size: usize) -> Result<()> {
        self.spec.validate()?;
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Invalid(format!("initial learning rate must be positive, got {}", self.initial_lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("epochs and batch size must be positive".into()));
        }
        if self.checkpoint_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!("checkpoint ladder {:?} is not strictly increasing", self.checkpoint_ladder)));
        }
        let total = (corpus_size * self.epochs) as u64;
        if let Some(&last) = self.checkpoint_ladder.last() {
            if last > total {
                return Err(Error::Invalid(format!("checkpoint at {last} sentences exceeds the {total} seen in training")));
            }
        }
        Ok(())
    }
}

/// Learning rate in effect after `sentences_seen` sentences.
pub fn lr_at(sentences_seen: u64, corpus_size: u64, initial_lr: f64) -> f64 {
    assert!(corpus_size > 0, "corpus size must be positive");
    let n = corpus_size as f64;
    let seen = sentences_seen as f64;
    if seen < n / 3.0 {
        initial_lr
    } else if seen < 2.0 * n / 3.0 {
        initial_lr / 2.0
    } else if seen < n {
        initial_lr / 4.0
    } else {
        initial_lr / 8.0
    }
}

/// `v ← momentum·v + g; p ← p − lr·v` for every named tensor.
pub fn sgd_momentum_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    velocity: &mut BTreeMap<String, Tensor>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::Invalid(format!("non-finite gradient for {name}")));
    }
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        if g.shape() != p.shape() {
            return Err(Error::Invalid(format!("gradient shape {:?} for {name} of shape {:?}", g.shape(), p.shape())));
        }
        let v = velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// `1000 → "1K"`, `3_000_000 → "3M"`, otherwise the plain number.
pub fn ladder_tag(sentences: u64) -> String {
    if sentences >= 1_000_000 && sentences % 1_000_000 == 0 {
        format!("{}M", sentences / 1_000_000)
    } else if sentences >= 1_000 && sentences % 1_000 == 0 {
        format!("{}K", sentences / 1_000)
    } else {
        sentences.to_string()
    }
}

pub fn epoch_tag(epoch: usize) -> String {
    format!("epoch{epoch}")
}

/// Tags of every checkpoint a run with this config emits, in order.
pub fn checkpoint_tags(config: &TrainConfig, corpus_size: usize) -> Vec<String> {
    let n = corpus_size as u64;
    let epoch_ends: Vec<u64> = (1..=config.epochs as u64).map(|e| e * n).collect();
    let mut points: Vec<(u64, String)> = config
        .checkpoint_ladder
        .iter()
        .filter(|p| !epoch_ends.contains(p))
        .map(|&p| (p, ladder_tag(p)))
        .collect();
    points.extend(epoch_ends.iter().enumerate().map(|(e, &p)| (p, epoch_tag(e + 1))));
    points.sort_by_key(|(p, _)| *p);
    points.into_iter().map(|(_, t)| t).collect()
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub checkpoints: Vec<ModelCheckpoint>,
    /// Mean cross-entropy of each batch, before its update.
    pub loss_trace: Vec<f64>,
}

/// Trains from the seed's initialization and keeps every checkpoint.
pub fn train(config: &TrainConfig, corpus: &SentenceCorpus) -> Result<TrainRun> {
    let mut checkpoints = Vec::new();
    let loss_trace = train_with(config, corpus, |c| {
        checkpoints.push(c.clone());
        Ok(())
    })?;
    Ok(TrainRun { config: config.clone(), checkpoints, loss_trace })
}

/// Trains from the seed's initialization, handing each checkpoint to `sink`.
pub fn train_with(
    config: &TrainConfig,
    corpus: &SentenceCorpus,
    sink: impl FnMut(&ModelCheckpoint) -> Result<()>,
) -> Result<Vec<f64>> {
    config.validate(corpus.len())?;
    let model = init_model(&config.spec, config.seed)?;
    train_from(model, config, corpus, sink)
}

/// Trains `model` in place of a fresh initialization.
pub fn train_from(
    mut model: ModelCheckpoint,
    config: &TrainConfig,
    corpus: &SentenceCorpus,
    mut sink: impl FnMut(&ModelCheckpoint) -> Result<()>,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    config.validate(corpus.len())?;
    if model.spec != config.spec {
        return Err(Error::Invalid("model and config describe different architectures".into()));
    }
    let n = corpus.len() as u64;
    let mut velocity = BTreeMap::new();
    let mut loss_trace = Vec::new();
    let mut seen = 0u64;
    let mut ladder = config.checkpoint_ladder.iter().copied().peekable();
    let mut batch_index = 0usize;

    for epoch in 1..=config.epochs {
        let order_seed = config.seed ^ ((epoch as u64) << 32);
        for batch in batches(corpus, config.batch_size, order_seed) {
            let seqs: Vec<&[usize]> = batch.sequences().collect();
            let (loss, grads) = model.loss_and_gradients(&seqs)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: "loss", batch: batch_index });
            }
            let lr = lr_at(seen, n, config.initial_lr);
            sgd_momentum_step(&mut model.tensors, &grads, &mut velocity, lr, config.momentum)
                .map_err(|_| Error::NonFinite { what: "gradient", batch: batch_index })?;
            loss_trace.push(loss);
            seen += seqs.len() as u64;
            batch_index += 1;
            model.sentences_seen = seen;

            let epoch_end = epoch as u64 * n;
            while let Some(&p) = ladder.peek() {
                if p > seen {
                    break;
                }
                ladder.next();
                if p != epoch_end {
                    model.checkpoint_tag = ladder_tag(p);
                    sink(&model)?;
                }
            }
        }
        model.checkpoint_tag = epoch_tag(epoch);
        sink(&model)?;
    }
    Ok(loss_trace)
}
