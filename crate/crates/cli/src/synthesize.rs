//! Synthetic reading datasets generated from a reference model's surprisal.

use std::collections::{BTreeMap, HashMap};

use readlm_core::corpus::Vocabulary;
use readlm_core::reading::{save_dataset, Dataset, FrequencyNorms, Stimulus};
use readlm_core::synth::{synthesize_reading, SynthParams};
use readlm_core::{Error, Result};
use serde::Serialize;

use crate::config::{ensure_parent, to_toml, write_if_changed, PipelineConfig, Reference};
use crate::preprocess::load_vocabulary;
use crate::surprisal::checkpoint_surprisal;
use crate::train::read_manifest;

#[derive(Debug, Clone, Serialize)]
struct Sidecar<'a> {
    references: &'a [Reference],
    /// Mean natural-log surprisal of the generating model over stimulus words.
    reference_mean_surprisal: f64,
    subset_sentences: Vec<u32>,
    datasets: &'a BTreeMap<Dataset, SynthParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub dataset: Dataset,
    pub events: usize,
    pub sentences: usize,
}

/// Sentences read in the non-SPR datasets: the shortest `fraction`, ties by id.
pub fn subset(stimuli: &[Stimulus], fraction: f64) -> Vec<u32> {
    let mut order: Vec<&Stimulus> = stimuli.iter().collect();
    order.sort_by_key(|s| (s.words.len(), s.sentence_id));
    let keep = ((stimuli.len() as f64 * fraction).round() as usize).clamp(1, stimuli.len());
    let mut ids: Vec<u32> = order[..keep].iter().map(|s| s.sentence_id).collect();
    ids.sort_unstable();
    ids
}

fn single_surprisal(cfg: &PipelineConfig, r: &Reference, vocab: &Vocabulary, stimuli: &[Stimulus]) -> Result<HashMap<(u32, usize), f64>> {
    let Some(arch) = r.architecture()? else {
        // Uniform over the non-special vocabulary.
        let v = (vocab.num_words() as f64).ln();
        return Ok(stimuli.iter().flat_map(|s| (1..=s.words.len() + 1).map(move |p| ((s.sentence_id, p), v))).collect());
    };
    let seed = r.seed;
    let manifest = read_manifest(cfg, arch, seed)?
        .ok_or_else(|| Error::Invalid(format!("reference run {arch} seed {seed} is not trained; run `train` first")))?;
    let entry = manifest
        .checkpoints
        .iter()
        .find(|c| c.tag == r.checkpoint)
        .or_else(|| if r.checkpoint.is_empty() { manifest.checkpoints.last() } else { None })
        .ok_or_else(|| Error::Invalid(format!("reference run {arch} seed {seed} has no checkpoint `{}`", r.checkpoint)))?;
    let table = checkpoint_surprisal(cfg, arch, seed, entry, vocab, stimuli)?;
    Ok(table.rows.iter().map(|r| ((r.sentence_id, r.position), r.surprisal)).collect())
}

/// Surprisal under the equal-weight mixture of the references.
fn reference_surprisal(cfg: &PipelineConfig, refs: &[Reference], vocab: &Vocabulary, stimuli: &[Stimulus]) -> Result<HashMap<(u32, usize), f64>> {
    let tables = refs.iter().map(|r| single_surprisal(cfg, r, vocab, stimuli)).collect::<Result<Vec<_>>>()?;
    let ln_k = (tables.len() as f64).ln();
    let mut out = HashMap::new();
    for key in tables[0].keys() {
        let s: Vec<f64> = tables.iter().map(|t| t[key]).collect();
        let min = s.iter().copied().fold(f64::INFINITY, f64::min);
        let lse = -min + s.iter().map(|v| (min - v).exp()).sum::<f64>().ln();
        out.insert(*key, ln_k - lse);
    }
    Ok(out)
}

pub fn synthesize(cfg: &PipelineConfig) -> Result<Vec<SynthSummary>> {
    let syn = cfg
        .synthesize
        .as_ref()
        .ok_or_else(|| Error::Invalid("the config has no [synthesize] section".into()))?;
    let vocab = load_vocabulary(cfg)?;
    let stimuli = readlm_core::reading::read_stimuli(&cfg.paths.stimuli)?;
    let norms = FrequencyNorms::read_tsv(&cfg.paths.frequency_norms)?;
    let surprisal = reference_surprisal(cfg, &syn.references, &vocab, &stimuli)?;
    let ids = subset(&stimuli, syn.subset_fraction);
    let sub: Vec<Stimulus> = stimuli.iter().filter(|s| ids.binary_search(&s.sentence_id).is_ok()).cloned().collect();

    let layout = cfg.layout();
    let mut out = Vec::new();
    for (&dataset, params) in &syn.datasets {
        let items = if dataset == Dataset::Spr { &stimuli } else { &sub };
        let events = synthesize_reading(params, items, &surprisal, &norms).map_err(|e| e.context(format!("synthesizing {dataset}")))?;
        let path = layout.synthetic(dataset);
        ensure_parent(&path)?;
        let tmp = path.with_extension("csv.partial");
        save_dataset(&events, &tmp)?;
        let bytes = std::fs::read(&tmp).map_err(|e| Error::io(&tmp, e))?;
        std::fs::remove_file(&tmp).map_err(|e| Error::io(&tmp, e))?;
        write_if_changed(&path, &bytes)?;
        out.push(SynthSummary { dataset, events: events.len(), sentences: items.len() });
    }

    let words: Vec<f64> = stimuli
        .iter()
        .flat_map(|s| (1..=s.words.len()).map(|p| surprisal[&(s.sentence_id, p)]))
        .collect();
    let sidecar = Sidecar {
        references: &syn.references,
        reference_mean_surprisal: words.iter().sum::<f64>() / words.len() as f64,
        subset_sentences: ids,
        datasets: &syn.datasets,
    };
    write_if_changed(&layout.synthetic_params(), to_toml(&sidecar)?.as_bytes())?;
    Ok(out)
}
