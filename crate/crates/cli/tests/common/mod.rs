#![allow(dead_code)]

use std::path::{Path, PathBuf};

use readlm::{Overrides, PipelineConfig};
use readlm_core::reading::{write_stimuli, FrequencyNorms, Stimulus};
use readlm_core::toy;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

/// A miniature corpus, stimuli and norms in `dir`.
pub fn tiny_inputs(dir: &Path) {
    let corpus = toy::corpus(3, 4000);
    std::fs::write(dir.join("corpus.txt"), corpus.join("\n") + "\n").unwrap();
    let stimuli = toy::stimuli(3, 24, 10);
    write_stimuli(&stimuli, &dir.join("stimuli.tsv")).unwrap();
    let words: Vec<String> = stimuli.iter().map(|(id, s)| Stimulus::new(*id, s).words.join(" ")).collect();
    let norms = toy::frequency_norms(corpus.iter().chain(&words).map(String::as_str));
    FrequencyNorms::new(norms).unwrap().write_tsv(&dir.join("norms.tsv")).unwrap();
}

pub struct Tiny {
    pub architectures: &'static str,
    pub seeds: &'static str,
    pub ladder: String,
    pub comparisons: &'static str,
    pub gru_lr: f64,
    /// `uniform`, or `+`-joined trained architectures (seed 1).
    pub reference: &'static str,
}

impl Default for Tiny {
    fn default() -> Self {
        Self {
            architectures: r#"["gru-1", "transformer-1"]"#,
            seeds: "[1]",
            ladder: "[30, 80, 150, 250]".into(),
            comparisons: r#"[["gru-1", "transformer-1"]]"#,
            gru_lr: 0.02,
            reference: "uniform",
        }
    }
}

impl Tiny {
    pub fn toml(&self) -> String {
        format!(
            r#"
[paths]
corpus = "corpus.txt"
stimuli = "stimuli.tsv"
frequency_norms = "norms.tsv"
output = "out"

[vocabulary]
size = 300
max_sentence_length = 39

[model]
embed_dim = 8
gru_hidden = 8
gru_proj = 8
heads = 2
ffn_dim = 16

[training]
architectures = {arch}
seeds = {seeds}
epochs = 1
batch_size = 10
momentum = 0.9
gru_learning_rate = {lr:?}
transformer_learning_rate = 0.005
checkpoint_ladder = {ladder}

[analysis]
datasets = ["SPR", "EEG"]
spr_subsets = true
comparisons = {cmp}
gam_basis = 4
difference_grid = 50

[synthesize]
references = [{refs}]
subset_fraction = 0.5

[synthesize.datasets.SPR]
dataset = "SPR"
subjects = 6
intercept = 5.8
beta = [-0.03, 0.02, -0.01, -0.01, 0.01]
gamma_prev = 0.0
gamma = {gamma_spr}
beta_baseline = 0.0
sd_baseline = 0.0
sd_subject = 0.15
sd_item = 0.04
sd_residual = 0.25
outlier_rate = 0.01
artifact_rate = 0.0
seed = 5

[synthesize.datasets.EEG]
dataset = "EEG"
subjects = 6
intercept = 0.0
beta = [-0.3, 0.1, -0.1]
gamma_prev = 0.0
gamma = {gamma_eeg}
beta_baseline = 0.3
sd_baseline = 2.0
sd_subject = 1.0
sd_item = 0.5
sd_residual = 4.0
outlier_rate = 0.0
artifact_rate = 0.05
seed = 6
"#,
            arch = self.architectures,
            seeds = self.seeds,
            lr = self.gru_lr,
            ladder = self.ladder,
            cmp = self.comparisons,
            refs = self.reference.split('+').map(|m| format!("{{ model = \"{m}\", seed = 1 }}")).collect::<Vec<_>>().join(", "),
            gamma_spr = if self.reference == "uniform" { 0.0 } else { 1.0 },
            gamma_eeg = if self.reference == "uniform" { 0.0 } else { 6.0 },
        )
    }

    /// Writes inputs and config into `dir` and loads the config.
    pub fn setup(&self, dir: &Path) -> PipelineConfig {
        tiny_inputs(dir);
        let path = dir.join("pipeline.toml");
        std::fs::write(&path, self.toml()).unwrap();
        PipelineConfig::load(&path, &Overrides::default()).unwrap()
    }
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every file under `dir` with its contents, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), read(&p)));
            }
        }
    }
    out.sort();
    out
}
