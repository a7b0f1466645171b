//! Surprisal extraction and goodness-of-fit for every checkpoint.

use std::collections::BTreeSet;

use rayon::prelude::*;
use readlm_core::mixed::{
    build_design, collinearity_check, fit_ml, fit_ml_with, goodness_of_fit, FitOptions, MixedFit, ModelFormula,
};
use readlm_core::reading::{
    apply_exclusions, build_predictors, load_dataset, split_spr_by_subset, Dataset, FrequencyNorms, ReadingEvent,
};
use readlm_core::{Error, Result, SurprisalTable};
use serde::{Deserialize, Serialize};

use crate::config::{ensure_parent, to_toml, write_if_changed, Architecture, PipelineConfig};
use crate::preprocess::load_prepared;
use crate::surprisal::checkpoint_surprisal;
use crate::train::{read_manifest, CheckpointEntry};

/// One row of `fits.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub dataset: String,
    pub model: String,
    pub layers: usize,
    pub seed: u64,
    pub checkpoint: String,
    pub sentences_seen: u64,
    pub avg_log_prob: f64,
    pub gof: f64,
    pub deviance_reduction: f64,
    pub surprisal_coefficient: f64,
    pub flagged_negative: bool,
    pub converged: bool,
    pub n: usize,
    /// Empty unless the fit failed.
    pub error: String,
}

impl FitRow {
    pub fn architecture(&self) -> Result<Architecture> {
        Ok(Architecture { kind: self.model.parse()?, layers: self.layers })
    }

    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

/// Long-format fixed effects of every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetailRow {
    dataset: String,
    model: String,
    layers: usize,
    seed: u64,
    checkpoint: String,
    term: String,
    estimate: f64,
    std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
struct VariantMetadata {
    dataset: String,
    events: usize,
    included: usize,
    base_deviance: f64,
    base_converged: bool,
    base_evaluations: usize,
    base_error: String,
    max_vif: f64,
    collinearity_flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct Metadata {
    checkpoints: usize,
    variants: Vec<VariantMetadata>,
}

/// An analyzed slice of one dataset.
struct Variant {
    label: String,
    dataset: Dataset,
    all: Vec<ReadingEvent>,
    included: Vec<ReadingEvent>,
}

struct Instance {
    arch: Architecture,
    seed: u64,
    entry: CheckpointEntry,
}

fn variants(cfg: &PipelineConfig) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for &d in &cfg.analysis.datasets {
        let all = load_dataset(d, &cfg.reading_path(d)).map_err(|e| e.context(format!("loading {d} data")))?;
        let included = apply_exclusions(&all);
        if included.is_empty() {
            return Err(Error::Invalid(format!("no {d} events survive the exclusions")));
        }
        out.push(Variant { label: d.to_string(), dataset: d, all, included });
    }
    if cfg.analysis.spr_subsets {
        let shared: BTreeSet<u32> =
            out.iter().filter(|v| v.dataset != Dataset::Spr).flat_map(|v| v.all.iter().map(|e| e.sentence_id)).collect();
        let spr = out
            .iter()
            .find(|v| v.dataset == Dataset::Spr)
            .ok_or_else(|| Error::Invalid("SPR subsets need SPR among the analysis datasets".into()))?;
        if shared.is_empty() {
            return Err(Error::Invalid("SPR subsets need a second dataset to define the shared sentences".into()));
        }
        let (a, b) = split_spr_by_subset(&spr.included, &shared);
        let all = spr.all.clone();
        out.push(Variant { label: "SPR-shared".into(), dataset: Dataset::Spr, all: all.clone(), included: a });
        out.push(Variant { label: "SPR-only".into(), dataset: Dataset::Spr, all, included: b });
    }
    Ok(out)
}

fn instances(cfg: &PipelineConfig) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for &arch in &cfg.training.architectures {
        for &seed in &cfg.training.seeds {
            match read_manifest(cfg, arch, seed)? {
                Some(m) if !m.checkpoints.is_empty() => {
                    out.extend(m.checkpoints.into_iter().map(|entry| Instance { arch, seed, entry }))
                }
                _ => missing.push(format!("{arch} seed {seed}")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing { what: "trained runs (run `train` first)", items: missing });
    }
    Ok(out)
}

fn unwrap_fit(r: Result<MixedFit>) -> Result<MixedFit> {
    match r {
        Err(Error::NotConverged { best, .. }) => Ok(*best),
        other => other,
    }
}

struct BaseFit {
    fit: Result<MixedFit>,
    meta: VariantMetadata,
}

fn base_fit(v: &Variant, norms: &FrequencyNorms, surprisal: &SurprisalTable) -> Result<BaseFit> {
    let table = build_predictors(&v.all, &v.included, norms, &surprisal.rows)?;
    let mut cols: Vec<(&str, &[f64])> = table.mains.iter().map(|c| (c.name.as_str(), c.values.as_slice())).collect();
    cols.extend(table.surprisal.iter().map(|c| (c.name.as_str(), c.values.as_slice())));
    let report = collinearity_check(&cols)?;
    let fit = build_design(&ModelFormula::baseline(v.dataset), &table).and_then(|d| unwrap_fit(fit_ml(&d)));
    let meta = VariantMetadata {
        dataset: v.label.clone(),
        events: v.all.len(),
        included: table.len(),
        base_deviance: fit.as_ref().map(|f| f.deviance).unwrap_or(f64::NAN),
        base_converged: fit.as_ref().is_ok_and(|f| f.convergence.converged),
        base_evaluations: fit.as_ref().map(|f| f.convergence.evaluations).unwrap_or(0),
        base_error: fit.as_ref().err().map(|e| e.to_string()).unwrap_or_default(),
        max_vif: report.vif.iter().copied().fold(0.0, f64::max),
        collinearity_flags: report.flags,
    };
    Ok(BaseFit { fit, meta })
}

fn full_fit(
    v: &Variant,
    base: &MixedFit,
    norms: &FrequencyNorms,
    surprisal: &SurprisalTable,
) -> Result<(f64, MixedFit, readlm_core::mixed::GoodnessOfFit)> {
    let table = build_predictors(&v.all, &v.included, norms, &surprisal.rows)?;
    let design = build_design(&ModelFormula::with_surprisal(v.dataset), &table)?;
    let options = FitOptions { start: Some(base.theta.clone()), max_evaluations: None };
    let fit = unwrap_fit(fit_ml_with(&design, &options))?;
    let coef = fit.coefficient("surprisal").expect("full model has a surprisal term");
    let gof = goodness_of_fit(base, &fit, coef)?;
    Ok((table.avg_log_prob(), fit, gof))
}

fn detail_rows(row: &FitRow, fit: &MixedFit) -> Vec<DetailRow> {
    fit.fixed_names
        .iter()
        .zip(&fit.coefficients)
        .zip(&fit.std_errors)
        .map(|((term, estimate), std_error)| DetailRow {
            dataset: row.dataset.clone(),
            model: row.model.clone(),
            layers: row.layers,
            seed: row.seed,
            checkpoint: row.checkpoint.clone(),
            term: term.clone(),
            estimate: *estimate,
            std_error: *std_error,
        })
        .collect()
}

pub fn analyze(cfg: &PipelineConfig) -> Result<Vec<FitRow>> {
    let instances = instances(cfg)?;
    let prepared = load_prepared(cfg)?;
    let norms = FrequencyNorms::read_tsv(&cfg.paths.frequency_norms)?;
    let variants = variants(cfg)?;
    let pool = crate::pool(cfg.jobs)?;

    let tables: Vec<Result<SurprisalTable>> = pool.install(|| {
        instances
            .par_iter()
            .map(|i| {
                checkpoint_surprisal(cfg, i.arch, i.seed, &i.entry, &prepared.vocab, &prepared.stimuli)
                    .map_err(|e| e.context(format!("surprisal of {} seed {} at {}", i.arch, i.seed, i.entry.tag)))
            })
            .collect()
    });
    let first = tables.iter().find_map(|t| t.as_ref().ok()).ok_or_else(|| match &tables[0] {
        Err(e) => Error::Invalid(format!("no checkpoint could be scored: {e}")),
        Ok(_) => unreachable!(),
    })?;

    let bases: Vec<BaseFit> = pool.install(|| {
        variants
            .par_iter()
            .map(|v| base_fit(v, &norms, first).map_err(|e| e.context(format!("baseline of {}", v.label))))
            .collect::<Result<Vec<_>>>()
    })?;

    let work: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..instances.len()).map(move |i| (v, i))).collect();
    let results: Vec<(FitRow, Vec<DetailRow>)> = pool.install(|| {
        work.par_iter()
            .map(|&(vi, ii)| {
                let v = &variants[vi];
                let inst = &instances[ii];
                let mut row = FitRow {
                    dataset: v.label.clone(),
                    model: inst.arch.kind.to_string(),
                    layers: inst.arch.layers,
                    seed: inst.seed,
                    checkpoint: inst.entry.tag.clone(),
                    sentences_seen: inst.entry.sentences_seen,
                    avg_log_prob: f64::NAN,
                    gof: f64::NAN,
                    deviance_reduction: f64::NAN,
                    surprisal_coefficient: f64::NAN,
                    flagged_negative: false,
                    converged: false,
                    n: 0,
                    error: String::new(),
                };
                let outcome = match (&tables[ii], &bases[vi].fit) {
                    (Err(e), _) => Err(e.to_string()),
                    (_, Err(e)) => Err(format!("baseline fit failed: {e}")),
                    (Ok(t), Ok(base)) => full_fit(v, base, &norms, t).map_err(|e| e.to_string()),
                };
                match outcome {
                    Ok((alp, fit, gof)) => {
                        row.avg_log_prob = alp;
                        row.gof = gof.value;
                        row.deviance_reduction = gof.deviance_reduction;
                        row.surprisal_coefficient = gof.surprisal_coefficient;
                        row.flagged_negative = gof.flagged_negative;
                        row.converged = fit.convergence.converged && bases[vi].meta.base_converged;
                        row.n = fit.n;
                        let details = detail_rows(&row, &fit);
                        (row, details)
                    }
                    Err(e) => {
                        row.error = e;
                        (row, Vec::new())
                    }
                }
            })
            .collect()
    });

    let mut rows: Vec<FitRow> = Vec::with_capacity(results.len());
    let mut details = Vec::new();
    for (r, d) in results {
        rows.push(r);
        details.extend(d);
    }
    let key = |r: &FitRow| (r.dataset.clone(), r.model.clone(), r.layers, r.seed, r.sentences_seen);
    rows.sort_by_key(key);
    details.sort_by(|a, b| {
        (&a.dataset, &a.model, a.layers, a.seed, &a.checkpoint).cmp(&(&b.dataset, &b.model, b.layers, b.seed, &b.checkpoint))
    });

    let layout = cfg.layout();
    ensure_parent(&layout.fits())?;
    write_if_changed(&layout.fits(), &to_csv(&rows)?)?;
    write_if_changed(&layout.fit_details(), &to_csv(&details)?)?;
    let meta = Metadata { checkpoints: instances.len(), variants: bases.into_iter().map(|b| b.meta).collect() };
    write_if_changed(&layout.analysis_metadata(), to_toml(&meta)?.as_bytes())?;
    Ok(rows)
}

pub(crate) fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Invalid(format!("cannot write CSV: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Invalid(format!("cannot write CSV: {e}")))
}

pub fn read_fits(path: &std::path::Path) -> Result<Vec<FitRow>> {
    if !path.exists() {
        return Err(Error::Invalid(format!("{} is missing; run `analyze` first", path.display())));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(path, i + 2, e.to_string())))
        .collect()
}
