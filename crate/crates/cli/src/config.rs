//! Pipeline configuration (TOML) and the output directory layout.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use readlm_core::lm::ModelKind;
use readlm_core::reading::Dataset;
use readlm_core::synth::SynthParams;
use readlm_core::trainer::TrainConfig;
use readlm_core::{ArchitectureSpec, Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An LM type: architecture family and depth, written `gru-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Architecture {
    pub kind: ModelKind,
    pub layers: usize,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind.as_str(), self.layers)
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("architecture `{s}` should look like gru-1 or transformer-2"));
        let (kind, layers) = s.rsplit_once('-').ok_or_else(bad)?;
        let layers: usize = layers.parse().map_err(|_| bad())?;
        if layers == 0 {
            return Err(bad());
        }
        Ok(Self { kind: kind.parse()?, layers })
    }
}

impl Serialize for Architecture {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// One sentence per line.
    pub corpus: PathBuf,
    /// `sentence_id<TAB>text`.
    pub stimuli: PathBuf,
    /// `word<TAB>count_per_million`.
    pub frequency_norms: PathBuf,
    pub output: PathBuf,
    /// Reading-data CSVs. Datasets without an entry are read from the
    /// synthetic output.
    #[serde(default)]
    pub reading: BTreeMap<Dataset, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularyConfig {
    /// Most frequent training words kept.
    pub size: usize,
    pub max_sentence_length: usize,
}

/// Layer sizes shared by every architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub gru_proj: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoredPrecision {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub architectures: Vec<Architecture>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub gru_learning_rate: f64,
    pub transformer_learning_rate: f64,
    pub checkpoint_ladder: Vec<u64>,
    #[serde(default = "default_precision")]
    pub precision: StoredPrecision,
}

fn default_precision() -> StoredPrecision {
    StoredPrecision::F64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub datasets: Vec<Dataset>,
    /// Also analyze SPR split into sentences shared with the other datasets
    /// and the rest.
    #[serde(default)]
    pub spr_subsets: bool,
    #[serde(default)]
    pub comparisons: Vec<(Architecture, Architecture)>,
    pub gam_basis: usize,
    #[serde(default = "default_grid")]
    pub difference_grid: usize,
}

fn default_grid() -> usize {
    readlm_core::gam::DIFFERENCE_GRID
}

/// Source of the generating surprisal for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    /// `uniform` or an architecture.
    pub model: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checkpoint: String,
    /// Training epochs of the reference run, if it should train longer
    /// than the analyzed runs.
    #[serde(default)]
    pub epochs: Option<usize>,
}

impl Reference {
    pub fn architecture(&self) -> Result<Option<Architecture>> {
        if self.model == "uniform" {
            Ok(None)
        } else {
            self.model.parse().map(Some)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeConfig {
    /// Generating models. Several references are mixed with equal weight.
    pub references: Vec<Reference>,
    /// Share of the stimuli (shortest first) read in the non-SPR datasets.
    pub subset_fraction: f64,
    #[serde(default)]
    pub datasets: BTreeMap<Dataset, SynthParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub vocabulary: VocabularyConfig,
    pub model: ModelDims,
    pub training: TrainingConfig,
    pub analysis: AnalysisConfig,
    pub synthesize: Option<SynthesizeConfig>,
    #[serde(skip)]
    pub jobs: usize,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed_offset: u64,
}

impl PipelineConfig {
    /// Parses `path`, resolving relative paths against its directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.paths.corpus);
        resolve(&mut cfg.paths.stimuli);
        resolve(&mut cfg.paths.frequency_norms);
        resolve(&mut cfg.paths.output);
        cfg.paths.reading.values_mut().for_each(resolve);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.output {
            self.paths.output = out.clone();
        }
        self.jobs = o.jobs.unwrap_or(1).max(1);
        if o.seed_offset != 0 {
            self.training.seeds.iter_mut().for_each(|s| *s += o.seed_offset);
            if let Some(syn) = &mut self.synthesize {
                syn.references.iter_mut().for_each(|r| r.seed += o.seed_offset);
                syn.datasets.values_mut().for_each(|p| p.seed += o.seed_offset);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.training.seeds.is_empty() {
            return bad("training.seeds must not be empty".into());
        }
        if self.training.architectures.is_empty() {
            return bad("training.architectures must not be empty".into());
        }
        if self.vocabulary.size == 0 {
            return bad("vocabulary.size must be positive".into());
        }
        for (a, b) in &self.analysis.comparisons {
            for arch in [a, b] {
                if !self.training.architectures.contains(arch) {
                    return bad(format!("comparison names `{arch}`, which is not trained"));
                }
            }
        }
        if let Some(syn) = &self.synthesize {
            if syn.references.is_empty() {
                return bad("synthesize.references must not be empty".into());
            }
            let uniform = syn.references.iter().map(Reference::architecture).collect::<Result<Vec<_>>>()?;
            if uniform.len() > 1 && uniform.iter().any(Option::is_none) {
                return bad("the uniform reference cannot be mixed with trained ones".into());
            }
            if !(syn.subset_fraction > 0.0 && syn.subset_fraction <= 1.0) {
                return bad("synthesize.subset_fraction must lie in (0, 1]".into());
            }
            for (d, p) in &syn.datasets {
                if p.dataset != *d {
                    return bad(format!("synthesize.datasets.{d} describes {}", p.dataset));
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout { root: self.paths.output.clone() }
    }

    pub fn spec(&self, arch: Architecture, vocab_size: usize) -> ArchitectureSpec {
        let d = &self.model;
        ArchitectureSpec {
            kind: arch.kind,
            layers: arch.layers,
            embed_dim: d.embed_dim,
            gru_hidden: d.gru_hidden,
            gru_proj: d.gru_proj,
            heads: d.heads,
            ffn_dim: d.ffn_dim,
            vocab_size,
            position_encoding: true,
        }
    }

    pub fn train_config(&self, arch: Architecture, seed: u64, vocab_size: usize) -> TrainConfig {
        let t = &self.training;
        let reference = self.synthesize.iter().flat_map(|s| &s.references).find(|r| {
            r.seed == seed && r.architecture().ok().flatten() == Some(arch) && !self.is_analyzed(arch, seed)
        });
        TrainConfig {
            spec: self.spec(arch, vocab_size),
            initial_lr: match arch.kind {
                ModelKind::Gru => t.gru_learning_rate,
                ModelKind::Transformer => t.transformer_learning_rate,
            },
            momentum: t.momentum,
            epochs: reference.and_then(|r| r.epochs).unwrap_or(t.epochs),
            batch_size: t.batch_size,
            checkpoint_ladder: t.checkpoint_ladder.clone(),
            seed,
        }
    }

    fn is_analyzed(&self, arch: Architecture, seed: u64) -> bool {
        self.training.architectures.contains(&arch) && self.training.seeds.contains(&seed)
    }

    /// Every `(architecture, seed)` to train, including the synthesis
    /// references that are trained models.
    pub fn runs(&self) -> Result<Vec<(Architecture, u64)>> {
        let mut runs: Vec<(Architecture, u64)> = self
            .training
            .architectures
            .iter()
            .flat_map(|a| self.training.seeds.iter().map(move |s| (*a, *s)))
            .collect();
        if let Some(syn) = &self.synthesize {
            for r in &syn.references {
                if let Some(a) = r.architecture()? {
                    if !runs.contains(&(a, r.seed)) {
                        runs.push((a, r.seed));
                    }
                }
            }
        }
        Ok(runs)
    }

    /// Where each analyzed dataset is read from.
    pub fn reading_path(&self, dataset: Dataset) -> PathBuf {
        self.paths.reading.get(&dataset).cloned().unwrap_or_else(|| self.layout().synthetic(dataset))
    }
}

/// Files written under the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn vocabulary(&self) -> PathBuf {
        self.root.join("preprocess/vocabulary.tsv")
    }

    pub fn filtered_corpus(&self) -> PathBuf {
        self.root.join("preprocess/corpus.txt")
    }

    pub fn corpus_stats(&self) -> PathBuf {
        self.root.join("preprocess/stats.toml")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn run_dir(&self, arch: Architecture, seed: u64) -> PathBuf {
        self.checkpoints().join(format!("{arch}_s{seed}"))
    }

    pub fn run_manifest(&self, arch: Architecture, seed: u64) -> PathBuf {
        self.run_dir(arch, seed).join("run.toml")
    }

    pub fn surprisal(&self, arch: Architecture, seed: u64, tag: &str) -> PathBuf {
        self.root.join(format!("surprisal/{arch}_s{seed}_{tag}.csv"))
    }

    pub fn synthetic(&self, dataset: Dataset) -> PathBuf {
        self.root.join(format!("synthetic/{dataset}.csv"))
    }

    pub fn synthetic_params(&self) -> PathBuf {
        self.root.join("synthetic/params.toml")
    }

    pub fn fits(&self) -> PathBuf {
        self.root.join("analysis/fits.csv")
    }

    pub fn fit_details(&self) -> PathBuf {
        self.root.join("analysis/fit_details.csv")
    }

    pub fn analysis_metadata(&self) -> PathBuf {
        self.root.join("analysis/metadata.toml")
    }

    pub fn compare(&self) -> PathBuf {
        self.root.join("compare")
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Writes `bytes` unless the file already holds exactly them.
pub(crate) fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<()> {
    if fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(());
    }
    ensure_parent(path)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Invalid(format!("cannot serialize: {e}")))
}
