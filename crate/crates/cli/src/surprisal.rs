use std::path::Path;

use readlm_core::corpus::Vocabulary;
use readlm_core::reading::Stimulus;
use readlm_core::{Error, ModelCheckpoint, Result, SurprisalTable};

use crate::config::{ensure_parent, write_if_changed, Architecture, PipelineConfig};
use crate::train::CheckpointEntry;

/// Stimulus surprisal under one checkpoint, cached as CSV next to the other
/// outputs.
pub fn checkpoint_surprisal(
    cfg: &PipelineConfig,
    arch: Architecture,
    seed: u64,
    entry: &CheckpointEntry,
    vocab: &Vocabulary,
    stimuli: &[Stimulus],
) -> Result<SurprisalTable> {
    let model = ModelCheckpoint::load(&cfg.layout().run_dir(arch, seed).join(&entry.file))?;
    let sentences: Vec<(u32, Vec<String>)> = stimuli.iter().map(|s| (s.sentence_id, s.words.clone())).collect();
    let table = SurprisalTable::for_sentences(&model, vocab, &sentences)?;
    let path = cfg.layout().surprisal(arch, seed, &entry.tag);
    ensure_parent(&path)?;
    cache(&table, &path)?;
    Ok(table)
}

fn cache(table: &SurprisalTable, path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.partial");
    table.write_csv(&tmp)?;
    let bytes = std::fs::read(&tmp).map_err(|e| Error::io(&tmp, e))?;
    std::fs::remove_file(&tmp).map_err(|e| Error::io(&tmp, e))?;
    write_if_changed(path, &bytes)
}
