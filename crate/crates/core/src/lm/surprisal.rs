use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

use super::{ModelCheckpoint, ModelKind};

/// One word (or the sentence-final EOS) scored by one model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisalRow {
    pub model: ModelKind,
    pub layers: usize,
    pub seed: u64,
    pub checkpoint: String,
    pub sentence_id: u32,
    /// 1-based word position; EOS sits at `len + 1`.
    pub position: usize,
    pub word: String,
    /// Natural-log surprisal.
    pub surprisal: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurprisalTable {
    pub rows: Vec<SurprisalRow>,
}

/// `-ln P(w_t | w_<t)` for each word of `sentence` and for EOS.
pub fn surprisal_of(model: &ModelCheckpoint, sentence: &[usize]) -> Result<Vec<f64>> {
    model.surprisal(sentence)
}

impl SurprisalTable {
    /// Scores each `(sentence_id, words)` stimulus with `model`.
    pub fn for_sentences(model: &ModelCheckpoint, vocab: &Vocabulary, sentences: &[(u32, Vec<String>)]) -> Result<Self> {
        let mut rows = Vec::new();
        let mut missing = Vec::new();
        for (sid, words) in sentences {
            let ids: Vec<usize> = words
                .iter()
                .filter_map(|w| {
                    let id = vocab.id_of(w).filter(|&id| id >= crate::corpus::NUM_SPECIALS);
                    if id.is_none() {
                        missing.push(format!("{w} (sentence {sid})"));
                    }
                    id
                })
                .collect();
            if ids.len() != words.len() {
                continue;
            }
            let s = model.surprisal(&ids)?;
            for (t, value) in s.into_iter().enumerate() {
                let word = words.get(t).map(String::as_str).unwrap_or("</s>");
                rows.push(SurprisalRow {
                    model: model.spec.kind,
                    layers: model.spec.layers,
                    seed: model.seed,
                    checkpoint: model.checkpoint_tag.clone(),
                    sentence_id: *sid,
                    position: t + 1,
                    word: word.to_string(),
                    surprisal: value,
                });
            }
        }
        if !missing.is_empty() {
            return Err(Error::Missing { what: "vocabulary entries", items: missing });
        }
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| csv_error(path, e))?;
        }
        if self.rows.is_empty() {
            w.write_record(["model", "layers", "seed", "checkpoint", "sentence_id", "position", "word", "surprisal"])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<SurprisalRow>, _>>()
            .map_err(|e| csv_error(path, e))?;
        Ok(Self { rows })
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

/// Mean log-probability (`-surprisal`) of the selected rows.
pub fn avg_log_prob<'a, I>(rows: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a SurprisalRow>,
{
    let (sum, n) = rows.into_iter().fold((0.0, 0usize), |(s, n), r| (s - r.surprisal, n + 1));
    if n == 0 {
        return Err(Error::Invalid("average log probability over an empty selection".into()));
    }
    Ok(sum / n as f64)
}
