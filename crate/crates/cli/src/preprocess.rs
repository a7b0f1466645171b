//! Vocabulary selection and corpus filtering.

use std::collections::BTreeSet;
use std::fs;

use readlm_core::corpus::{build_vocabulary, filter_sentences, tokenize_line, SentenceCorpus, Vocabulary};
use readlm_core::reading::{read_stimuli, Stimulus};
use readlm_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ensure_parent, to_toml, write_if_changed, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub raw_sentences: usize,
    pub kept_sentences: usize,
    pub kept_tokens: usize,
    pub vocabulary_words: usize,
    /// Stimulus words outside the most frequent training words.
    pub added_test_words: usize,
    pub stimuli: usize,
    pub stimulus_tokens: usize,
}

pub fn preprocess(cfg: &PipelineConfig) -> Result<CorpusStats> {
    let paths = &cfg.paths;
    let raw = fs::read_to_string(&paths.corpus).map_err(|e| Error::io(&paths.corpus, e))?;
    let stimuli = read_stimuli(&paths.stimuli)?;
    if stimuli.is_empty() {
        return Err(Error::Invalid(format!("{} holds no stimuli", paths.stimuli.display())));
    }
    let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    let tokens: Vec<String> = lines.iter().flat_map(|l| tokenize_line(l)).map(|t| t.text).collect();
    let test_words: BTreeSet<String> = stimuli.iter().flat_map(|s| s.words.iter().cloned()).collect();
    let vocab = build_vocabulary(tokens.iter().map(String::as_str), &test_words, cfg.vocabulary.size)?;
    let corpus = filter_sentences(lines.iter().copied(), &vocab, cfg.vocabulary.max_sentence_length);
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let layout = cfg.layout();
    ensure_parent(&layout.vocabulary())?;
    let mut bytes = Vec::new();
    for (w, f) in vocab.entries() {
        bytes.extend_from_slice(format!("{w}\t{f}\n").as_bytes());
    }
    write_if_changed(&layout.vocabulary(), &bytes)?;
    write_if_changed(&layout.filtered_corpus(), corpus_text(&corpus, &vocab).as_bytes())?;

    let top: BTreeSet<&str> = vocab.entries().iter().take(cfg.vocabulary.size).map(|(w, _)| w.as_str()).collect();
    let stats = CorpusStats {
        raw_sentences: lines.len(),
        kept_sentences: corpus.len(),
        kept_tokens: corpus.num_tokens(),
        vocabulary_words: vocab.num_words(),
        added_test_words: test_words.iter().filter(|w| !top.contains(w.as_str())).count(),
        stimuli: stimuli.len(),
        stimulus_tokens: stimuli.iter().map(|s| s.words.len()).sum(),
    };
    write_if_changed(&layout.corpus_stats(), to_toml(&stats)?.as_bytes())?;
    Ok(stats)
}

fn corpus_text(corpus: &SentenceCorpus, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (i, &id) in s.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(vocab.word_of(id).unwrap_or("<unk>"));
        }
        out.push('\n');
    }
    out
}

/// Outputs of [`preprocess`] as the later stages need them.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub corpus: SentenceCorpus,
    pub stimuli: Vec<Stimulus>,
}

pub fn load_vocabulary(cfg: &PipelineConfig) -> Result<Vocabulary> {
    let path = cfg.layout().vocabulary();
    if !path.exists() {
        return Err(Error::Invalid(format!("{} is missing; run `preprocess` first", path.display())));
    }
    Vocabulary::read_tsv(&path)
}

pub fn load_prepared(cfg: &PipelineConfig) -> Result<Prepared> {
    let vocab = load_vocabulary(cfg)?;
    let path = cfg.layout().filtered_corpus();
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ids = line
            .split_whitespace()
            .map(|w| vocab.id_of(w).ok_or_else(|| Error::parse(&path, i + 1, format!("`{w}` is not in the vocabulary"))))
            .collect::<Result<Vec<_>>>()?;
        sentences.push(ids);
    }
    let corpus = SentenceCorpus { sentences, max_len: cfg.vocabulary.max_sentence_length };
    let stimuli = read_stimuli(&cfg.paths.stimuli)?;
    Ok(Prepared { vocab, corpus, stimuli })
}
