//! SVG panels and CSV tables for fitted GAMs.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::{DifferenceCurve, GamFit, GamPoint};
use crate::error::{Error, Result};

/// Everything plotted for one dataset.
#[derive(Debug, Clone)]
pub struct DatasetPanels {
    pub name: String,
    pub points: Vec<GamPoint>,
    pub fit: GamFit,
    pub curves: Vec<DifferenceCurve>,
    /// Points per smooth curve.
    pub grid: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PanelReport {
    pub files: Vec<PathBuf>,
    /// Significance ticks drawn on each dataset's difference panel.
    pub ticks: Vec<(String, usize)>,
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Rows of `x,estimate,se,lo,hi,significant`.
fn write_series(path: &Path, x: &[f64], est: &[f64], se: &[f64], lo: &[f64], hi: &[f64], sig: &[bool]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| plot_err(path, e))?;
    w.write_record(["x", "estimate", "se", "lo", "hi", "significant"]).map_err(|e| plot_err(path, e))?;
    for i in 0..x.len() {
        w.write_record([
            x[i].to_string(),
            est[i].to_string(),
            se[i].to_string(),
            lo[i].to_string(),
            hi[i].to_string(),
            sig[i].to_string(),
        ])
        .map_err(|e| plot_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// Writes, per dataset, a scatter, a smooth and a difference panel plus a
/// CSV for every plotted series.
pub fn emit_panels(panels: &[DatasetPanels], dir: &Path) -> Result<PanelReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut report = PanelReport::default();
    for p in panels {
        let name = slug(&p.name);
        let levels: Vec<String> = p.fit.level_names().iter().map(|s| s.to_string()).collect();
        let colour = |level: &str| PALETTE[levels.iter().position(|l| l == level).unwrap_or(0) % PALETTE.len()];
        let xr = bounds(p.points.iter().map(|q| q.x));

        // Scatter.
        let csv_path = dir.join(format!("{name}_scatter.csv"));
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| plot_err(&csv_path, e))?;
        w.write_record(["x", "y", "level", "repetition"]).map_err(|e| plot_err(&csv_path, e))?;
        for q in &p.points {
            w.write_record([q.x.to_string(), q.y.to_string(), q.level.clone(), q.repetition.clone()])
                .map_err(|e| plot_err(&csv_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        report.files.push(csv_path);

        let svg = dir.join(format!("{name}_scatter.svg"));
        {
            let root = SVGBackend::new(&svg, (640, 420)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| plot_err(&svg, e))?;
            let yr = bounds(p.points.iter().map(|q| q.y));
            let mut chart = ChartBuilder::on(&root)
                .caption(format!("{}: goodness-of-fit by LM quality", p.name), ("sans-serif", 16))
                .margin(10)
                .x_label_area_size(35)
                .y_label_area_size(50)
                .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
                .map_err(|e| plot_err(&svg, e))?;
            chart
                .configure_mesh()
                .x_desc("average log-probability")
                .y_desc("goodness-of-fit")
                .draw()
                .map_err(|e| plot_err(&svg, e))?;
            for level in &levels {
                let c = colour(level);
                chart
                    .draw_series(p.points.iter().filter(|q| &q.level == level).map(|q| Circle::new((q.x, q.y), 3, c.filled())))
                    .map_err(|e| plot_err(&svg, e))?
                    .label(level.clone())
                    .legend(move |(x, y)| Circle::new((x, y), 3, c.filled()));
            }
            chart.configure_series_labels().border_style(BLACK).draw().map_err(|e| plot_err(&svg, e))?;
            root.present().map_err(|e| plot_err(&svg, e))?;
        }
        report.files.push(svg);

        // Smooths with confidence bands.
        let z = p.fit.critical_value();
        let mut smooths = Vec::new();
        for level in &levels {
            let l = p.fit.level(level)?;
            let xs: Vec<f64> =
                (0..p.grid).map(|i| l.range.0 + (l.range.1 - l.range.0) * i as f64 / (p.grid - 1) as f64).collect();
            let curve = p.fit.level_curve(level, &xs)?;
            let est: Vec<f64> = curve.iter().map(|c| c.0).collect();
            let se: Vec<f64> = curve.iter().map(|c| c.1).collect();
            let lo: Vec<f64> = est.iter().zip(&se).map(|(e, s)| e - z * s).collect();
            let hi: Vec<f64> = est.iter().zip(&se).map(|(e, s)| e + z * s).collect();
            let sig: Vec<bool> = lo.iter().zip(&hi).map(|(l, h)| *l > 0.0 || *h < 0.0).collect();
            let path = dir.join(format!("{name}_smooth_{}.csv", slug(level)));
            write_series(&path, &xs, &est, &se, &lo, &hi, &sig)?;
            report.files.push(path);
            smooths.push((level.clone(), xs, est, lo, hi));
        }
        let svg = dir.join(format!("{name}_smooths.svg"));
        {
            let root = SVGBackend::new(&svg, (640, 420)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| plot_err(&svg, e))?;
            let yr = bounds(smooths.iter().flat_map(|s| s.3.iter().chain(&s.4).copied()));
            let mut chart = ChartBuilder::on(&root)
                .caption(format!("{}: fitted smooths", p.name), ("sans-serif", 16))
                .margin(10)
                .x_label_area_size(35)
                .y_label_area_size(50)
                .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
                .map_err(|e| plot_err(&svg, e))?;
            chart
                .configure_mesh()
                .x_desc("average log-probability")
                .y_desc("goodness-of-fit")
                .draw()
                .map_err(|e| plot_err(&svg, e))?;
            for (level, xs, est, lo, hi) in &smooths {
                let c = colour(level);
                let band: Vec<(f64, f64)> =
                    xs.iter().zip(hi).map(|(x, y)| (*x, *y)).chain(xs.iter().zip(lo).rev().map(|(x, y)| (*x, *y))).collect();
                chart.draw_series(std::iter::once(Polygon::new(band, c.mix(0.2)))).map_err(|e| plot_err(&svg, e))?;
                chart
                    .draw_series(LineSeries::new(xs.iter().zip(est).map(|(x, y)| (*x, *y)), c.stroke_width(2)))
                    .map_err(|e| plot_err(&svg, e))?
                    .label(level.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], c.stroke_width(2)));
            }
            chart.configure_series_labels().border_style(BLACK).draw().map_err(|e| plot_err(&svg, e))?;
            root.present().map_err(|e| plot_err(&svg, e))?;
        }
        report.files.push(svg);

        // Difference curves with significance ticks.
        let mut ticks = 0;
        if !p.curves.is_empty() {
            for c in &p.curves {
                let path = dir.join(format!("{name}_diff_{}_vs_{}.csv", slug(&c.level_a), slug(&c.level_b)));
                write_series(&path, &c.x, &c.estimate, &c.se, &c.lo, &c.hi, &c.significant)?;
                report.files.push(path);
            }
            let svg = dir.join(format!("{name}_differences.svg"));
            {
                let root = SVGBackend::new(&svg, (640, 420)).into_drawing_area();
                root.fill(&WHITE).map_err(|e| plot_err(&svg, e))?;
                let dx = bounds(p.curves.iter().flat_map(|c| c.x.iter().copied()));
                let (ylo, yhi) = bounds(p.curves.iter().flat_map(|c| c.lo.iter().chain(&c.hi).copied()).chain([0.0]));
                let mut chart = ChartBuilder::on(&root)
                    .caption(format!("{}: estimated differences", p.name), ("sans-serif", 16))
                    .margin(10)
                    .x_label_area_size(35)
                    .y_label_area_size(50)
                    .build_cartesian_2d(dx.0..dx.1, ylo..yhi)
                    .map_err(|e| plot_err(&svg, e))?;
                chart
                    .configure_mesh()
                    .x_desc("average log-probability")
                    .y_desc("difference in goodness-of-fit")
                    .draw()
                    .map_err(|e| plot_err(&svg, e))?;
                chart
                    .draw_series(LineSeries::new([(dx.0, 0.0), (dx.1, 0.0)], BLACK.mix(0.5)))
                    .map_err(|e| plot_err(&svg, e))?;
                let tick_len = (yhi - ylo) * 0.03;
                for (i, c) in p.curves.iter().enumerate() {
                    let col = PALETTE[i % PALETTE.len()];
                    let band: Vec<(f64, f64)> = c
                        .x
                        .iter()
                        .zip(&c.hi)
                        .map(|(x, y)| (*x, *y))
                        .chain(c.x.iter().zip(&c.lo).rev().map(|(x, y)| (*x, *y)))
                        .collect();
                    chart.draw_series(std::iter::once(Polygon::new(band, col.mix(0.15)))).map_err(|e| plot_err(&svg, e))?;
                    chart
                        .draw_series(LineSeries::new(c.x.iter().zip(&c.estimate).map(|(x, y)| (*x, *y)), col.stroke_width(2)))
                        .map_err(|e| plot_err(&svg, e))?
                        .label(format!("{} - {}", c.level_a, c.level_b))
                        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], col.stroke_width(2)));
                    let base = ylo + tick_len * i as f64;
                    let marks: Vec<PathElement<(f64, f64)>> = c
                        .x
                        .iter()
                        .zip(&c.significant)
                        .filter(|(_, s)| **s)
                        .map(|(x, _)| PathElement::new(vec![(*x, base), (*x, base + tick_len)], col.stroke_width(2)))
                        .collect();
                    ticks += marks.len();
                    chart.draw_series(marks).map_err(|e| plot_err(&svg, e))?;
                }
                chart.configure_series_labels().border_style(BLACK).draw().map_err(|e| plot_err(&svg, e))?;
                root.present().map_err(|e| plot_err(&svg, e))?;
            }
            report.files.push(svg);
        }
        report.ticks.push((p.name.clone(), ticks));
    }
    Ok(report)
}
