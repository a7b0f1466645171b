//! One training run per `(architecture, seed)`, resumable per run.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use readlm_core::corpus::SentenceCorpus;
use readlm_core::lm::Precision;
use readlm_core::trainer::{train_with, TrainConfig};
use readlm_core::{Error, ModelCheckpoint, Result};
use serde::{Deserialize, Serialize};

use crate::config::{to_toml, write_if_changed, Architecture, PipelineConfig, StoredPrecision};
use crate::preprocess::load_prepared;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub tag: String,
    pub sentences_seen: u64,
    pub file: String,
}

/// Written last; its presence marks the run as complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub corpus_sentences: usize,
    pub corpus_tokens: usize,
    pub batches: usize,
    /// Mean loss over the last 100 batches.
    pub final_loss: f64,
    pub config: TrainConfig,
    pub checkpoints: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub architecture: Architecture,
    pub seed: u64,
    pub manifest: RunManifest,
    /// Already complete before this call.
    pub skipped: bool,
}

pub fn read_manifest(cfg: &PipelineConfig, arch: Architecture, seed: u64) -> Result<Option<RunManifest>> {
    let path = cfg.layout().run_manifest(arch, seed);
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(None);
    };
    toml::from_str(&text).map(Some).map_err(|e| Error::parse(&path, 0, e.message().to_string()))
}

/// Checkpoint files of a finished run, in training order.
pub fn checkpoint_paths(cfg: &PipelineConfig, arch: Architecture, seed: u64, m: &RunManifest) -> Vec<(CheckpointEntry, PathBuf)> {
    let dir = cfg.layout().run_dir(arch, seed);
    m.checkpoints.iter().map(|c| (c.clone(), dir.join(&c.file))).collect()
}

fn is_complete(cfg: &PipelineConfig, arch: Architecture, seed: u64, want: &TrainConfig, corpus: &SentenceCorpus) -> Result<Option<RunManifest>> {
    let Some(m) = read_manifest(cfg, arch, seed)? else {
        return Ok(None);
    };
    let same = m.config == *want && m.corpus_sentences == corpus.len() && m.corpus_tokens == corpus.num_tokens();
    let files = checkpoint_paths(cfg, arch, seed, &m).iter().all(|(_, p)| p.exists());
    Ok((same && files).then_some(m))
}

fn run_one(cfg: &PipelineConfig, arch: Architecture, seed: u64, corpus: &SentenceCorpus, vocab_size: usize) -> Result<RunOutcome> {
    let config = cfg.train_config(arch, seed, vocab_size);
    if let Some(manifest) = is_complete(cfg, arch, seed, &config, corpus)? {
        return Ok(RunOutcome { architecture: arch, seed, manifest, skipped: true });
    }
    let layout = cfg.layout();
    let dir = layout.run_dir(arch, seed);
    let _ = fs::remove_file(layout.run_manifest(arch, seed));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let precision = match cfg.training.precision {
        StoredPrecision::F64 => Precision::F64,
        StoredPrecision::F32 => Precision::F32,
    };
    let mut checkpoints = Vec::new();
    let losses = train_with(&config, corpus, |c: &ModelCheckpoint| {
        let file = c.file_name();
        c.save(&dir.join(&file), precision)?;
        checkpoints.push(CheckpointEntry { tag: c.checkpoint_tag.clone(), sentences_seen: c.sentences_seen, file });
        Ok(())
    })?;
    let tail = &losses[losses.len().saturating_sub(100)..];
    let mut trace = String::from("batch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        trace.push_str(&format!("{},{l}\n", i + 1));
    }
    write_if_changed(&dir.join("loss.csv"), trace.as_bytes())?;
    let manifest = RunManifest {
        corpus_sentences: corpus.len(),
        corpus_tokens: corpus.num_tokens(),
        batches: losses.len(),
        final_loss: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        config,
        checkpoints,
    };
    write_if_changed(&layout.run_manifest(arch, seed), to_toml(&manifest)?.as_bytes())?;
    Ok(RunOutcome { architecture: arch, seed, manifest, skipped: false })
}

/// Trains every configured run that is not already complete.
pub fn train_all(cfg: &PipelineConfig) -> Result<Vec<RunOutcome>> {
    let prepared = load_prepared(cfg)?;
    let runs = cfg.runs()?;
    let vocab_size = prepared.vocab.len();
    let pool = crate::pool(cfg.jobs)?;
    let results: Vec<Result<RunOutcome>> = pool.install(|| {
        runs.par_iter()
            .map(|&(arch, seed)| {
                run_one(cfg, arch, seed, &prepared.corpus, vocab_size).map_err(|e| e.context(format!("training {arch} seed {seed}")))
            })
            .collect()
    });
    results.into_iter().collect()
}
