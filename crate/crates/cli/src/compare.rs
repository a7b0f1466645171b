//! GAM smooths of goodness-of-fit over LM quality and difference curves.

use std::collections::BTreeMap;

use readlm_core::gam::{difference_smooth, emit_panels, fit_gam, DatasetPanels, GamPoint, GamSpec};
use readlm_core::{Error, Result};
use serde::Serialize;

use crate::analyze::{read_fits, to_csv, FitRow};
use crate::config::{write_if_changed, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothSummary {
    pub dataset: String,
    pub level: String,
    pub points: usize,
    pub edf: f64,
    pub lambda: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferenceSummary {
    pub dataset: String,
    pub level_a: String,
    pub level_b: String,
    pub significant_fraction: f64,
    /// `lo..hi` ranges of avg log-probability, `;`-separated.
    pub intervals: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub smooths: Vec<SmoothSummary>,
    pub differences: Vec<DifferenceSummary>,
    pub excluded: usize,
    /// Configured pairs left out because their quality ranges do not overlap.
    pub skipped: Vec<String>,
    pub files: Vec<std::path::PathBuf>,
}

/// Rows that enter the GAM: fitted and not flagged.
pub fn usable(rows: &[FitRow]) -> impl Iterator<Item = &FitRow> {
    rows.iter().filter(|r| !r.failed() && !r.flagged_negative && r.gof.is_finite() && r.avg_log_prob.is_finite())
}

pub fn compare(cfg: &PipelineConfig) -> Result<CompareReport> {
    let rows = read_fits(&cfg.layout().fits())?;
    compare_rows(cfg, &rows)
}

pub fn compare_rows(cfg: &PipelineConfig, rows: &[FitRow]) -> Result<CompareReport> {
    let mut by_dataset: BTreeMap<&str, Vec<GamPoint>> = BTreeMap::new();
    let mut kept = 0;
    for r in usable(rows) {
        by_dataset.entry(&r.dataset).or_default().push(GamPoint {
            x: r.avg_log_prob,
            y: r.gof,
            level: r.architecture()?.to_string(),
            repetition: format!("s{}", r.seed),
        });
        kept += 1;
    }
    if by_dataset.is_empty() {
        return Err(Error::Invalid("no usable goodness-of-fit rows to compare".into()));
    }
    let spec = GamSpec { k: cfg.analysis.gam_basis, ..GamSpec::default() };
    let mut panels = Vec::new();
    let mut smooths = Vec::new();
    let mut differences = Vec::new();
    let mut skipped = Vec::new();
    for (name, points) in by_dataset {
        let fit = fit_gam(&spec, &points).map_err(|e| e.context(format!("GAM for {name}")))?;
        for l in &fit.levels {
            smooths.push(SmoothSummary {
                dataset: name.to_string(),
                level: l.level.clone(),
                points: points.iter().filter(|p| p.level == l.level).count(),
                edf: l.edf,
                lambda: fit.lambda_smooth,
                sigma2: fit.sigma2,
            });
        }
        let levels = fit.level_names();
        let mut curves = Vec::new();
        for (a, b) in &cfg.analysis.comparisons {
            let (a, b) = (a.to_string(), b.to_string());
            if !levels.contains(&a.as_str()) || !levels.contains(&b.as_str()) {
                continue;
            }
            let (ra, rb) = (fit.level(&a)?.range, fit.level(&b)?.range);
            if ra.0.max(rb.0) >= ra.1.min(rb.1) {
                skipped.push(format!("{name}: {a} - {b}"));
                continue;
            }
            let c = difference_smooth(&fit, &a, &b, cfg.analysis.difference_grid)
                .map_err(|e| e.context(format!("difference {a} - {b} for {name}")))?;
            differences.push(DifferenceSummary {
                dataset: name.to_string(),
                level_a: a,
                level_b: b,
                significant_fraction: c.significant_fraction(),
                intervals: c.intervals.iter().map(|(lo, hi)| format!("{lo}..{hi}")).collect::<Vec<_>>().join(";"),
            });
            curves.push(c);
        }
        panels.push(DatasetPanels { name: name.to_string(), points, fit, curves, grid: cfg.analysis.difference_grid });
    }

    let dir = cfg.layout().compare();
    let mut report = emit_panels(&panels, &dir)?;
    let summary = dir.join("gam_summary.csv");
    write_if_changed(&summary, &to_csv(&smooths)?)?;
    report.files.push(summary);
    let diffs = dir.join("differences.csv");
    write_if_changed(&diffs, &to_csv(&differences)?)?;
    report.files.push(diffs);
    Ok(CompareReport { smooths, differences, excluded: rows.len() - kept, skipped, files: report.files })
}
