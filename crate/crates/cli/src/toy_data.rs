//! The bundled desk-scale inputs under `data/`.

use std::path::{Path, PathBuf};

use readlm_core::reading::{write_stimuli, FrequencyNorms, Stimulus};
use readlm_core::{toy, Error, Result};

pub const SEED: u64 = 7;
pub const CORPUS_SENTENCES: usize = 30_000;
pub const STIMULI: usize = 361;
pub const STIMULUS_MAX_LEN: usize = 14;

pub const CORPUS_FILE: &str = "toy_corpus.txt";
pub const STIMULI_FILE: &str = "toy_stimuli.tsv";
pub const NORMS_FILE: &str = "toy_norms.tsv";

/// Writes the toy corpus, stimuli and frequency norms into `dir`.
pub fn write_toy_data(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let corpus = toy::corpus(SEED, CORPUS_SENTENCES);
    let stimuli = toy::stimuli(SEED, STIMULI, STIMULUS_MAX_LEN);

    let corpus_path = dir.join(CORPUS_FILE);
    let mut text = corpus.join("\n");
    text.push('\n');
    std::fs::write(&corpus_path, text).map_err(|e| Error::io(&corpus_path, e))?;

    let stimuli_path = dir.join(STIMULI_FILE);
    write_stimuli(&stimuli, &stimuli_path)?;

    let words: Vec<String> = stimuli.iter().map(|(id, s)| Stimulus::new(*id, s).words.join(" ")).collect();
    let counts = toy::frequency_norms(corpus.iter().chain(&words).map(String::as_str));
    let norms_path = dir.join(NORMS_FILE);
    FrequencyNorms::new(counts)?.write_tsv(&norms_path)?;
    Ok(vec![corpus_path, stimuli_path, norms_path])
}
