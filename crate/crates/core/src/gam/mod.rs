//! Additive models of goodness-of-fit against LM quality: one penalized
//! cubic spline per LM type, level intercepts and a ridge-penalized
//! intercept per training repetition.

mod plot;
pub mod spline;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use plot::{emit_panels, DatasetPanels, PanelReport};
pub use spline::CubicSpline;

use crate::error::{Error, Result};
use crate::stats::normal_critical;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GamSpec {
    /// Basis dimension of each smooth.
    pub k: usize,
    pub ci_level: f64,
}

impl Default for GamSpec {
    fn default() -> Self {
        Self { k: 10, ci_level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamPoint {
    /// Covariate (average log-probability).
    pub x: f64,
    /// Response (goodness-of-fit).
    pub y: f64,
    pub level: String,
    pub repetition: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSmooth {
    pub level: String,
    pub spline: CubicSpline,
    /// Maps the `k − 1` constrained coefficients to knot values.
    pub constraint: DMatrix<f64>,
    /// First column of the smooth in the model matrix.
    pub offset: usize,
    /// Column of the level intercept; `None` for the reference level.
    pub intercept: Option<usize>,
    pub range: (f64, f64),
    pub edf: f64,
}

impl LevelSmooth {
    fn row(&self, x: f64) -> DVector<f64> {
        self.constraint.transpose() * self.spline.basis(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamFit {
    pub spec: GamSpec,
    pub levels: Vec<LevelSmooth>,
    pub repetitions: Vec<String>,
    /// First repetition column, if the model has a repetition effect.
    pub repetition_offset: Option<usize>,
    pub coefficients: DVector<f64>,
    /// `σ² (XᵀX + Σ λS)⁻¹`.
    pub covariance: DMatrix<f64>,
    /// Shared by all level smooths, relative to the normalized penalties.
    pub lambda_smooth: f64,
    pub lambda_repetition: f64,
    pub sigma2: f64,
    pub gcv: f64,
    pub edf: f64,
    pub n: usize,
    fitted: Vec<f64>,
}

impl GamFit {
    pub fn level(&self, name: &str) -> Result<&LevelSmooth> {
        self.levels
            .iter()
            .find(|l| l.level == name)
            .ok_or_else(|| Error::Invalid(format!("level `{name}` is not in the fit")))
    }

    pub fn level_names(&self) -> Vec<&str> {
        self.levels.iter().map(|l| l.level.as_str()).collect()
    }

    /// Centered smooth `s_level(x)`.
    pub fn smooth(&self, level: &str, x: f64) -> Result<f64> {
        let l = self.level(level)?;
        Ok(l.row(x).dot(&self.coefficients.rows(l.offset, l.constraint.ncols())))
    }

    fn contrast(&self, level: &LevelSmooth, x: f64, sign: f64, c: &mut DVector<f64>) {
        let r = level.row(x);
        for (i, v) in r.iter().enumerate() {
            c[level.offset + i] += sign * v;
        }
        if let Some(j) = level.intercept {
            c[j] += sign;
        }
    }

    /// Population-level curve `α + γ_level + s_level(x)` with its standard
    /// error at each `x`.
    pub fn level_curve(&self, level: &str, xs: &[f64]) -> Result<Vec<(f64, f64)>> {
        let l = self.level(level)?;
        Ok(xs
            .iter()
            .map(|&x| {
                let mut c = DVector::zeros(self.coefficients.len());
                c[0] = 1.0;
                self.contrast(l, x, 1.0, &mut c);
                (c.dot(&self.coefficients), c.dot(&(&self.covariance * &c)).max(0.0).sqrt())
            })
            .collect())
    }

    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    pub fn critical_value(&self) -> f64 {
        normal_critical(self.spec.ci_level)
    }
}

struct Model {
    x: DMatrix<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    /// Normalized smooth penalty summed over levels.
    smooth_penalty: DMatrix<f64>,
    /// Diagonal ridge on the repetition columns.
    ridge: DVector<f64>,
}

struct Solved {
    beta: DVector<f64>,
    ainv: DMatrix<f64>,
    rss: f64,
    trace: f64,
    gcv: f64,
}

impl Model {
    fn solve(&self, lambda_s: f64, lambda_r: f64) -> Option<Solved> {
        let n = self.x.nrows() as f64;
        let mut a = &self.xtx + &self.smooth_penalty * lambda_s;
        for (i, r) in self.ridge.iter().enumerate() {
            a[(i, i)] += lambda_r * r;
        }
        let chol = a.cholesky()?;
        let beta = chol.solve(&self.xty);
        let ainv = chol.inverse();
        let rss = (self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&(&self.xtx * &beta))).max(0.0);
        let trace = (&ainv * &self.xtx).trace();
        if trace >= n {
            return None;
        }
        Some(Solved { gcv: n * rss / (n - trace).powi(2), beta, ainv, rss, trace })
    }
}

/// Log10 λ search grid, refined once around the coarse optimum.
const COARSE: (f64, f64, f64) = (-8.0, 8.0, 1.0);
const FINE_STEP: f64 = 0.1;

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Fits the model with smoothing parameters chosen by GCV.
pub fn fit_gam(spec: &GamSpec, points: &[GamPoint]) -> Result<GamFit> {
    fit_gam_impl(spec, points, None)
}

/// Fits with fixed smoothing parameters (smooth, repetition).
pub fn fit_gam_with_lambda(spec: &GamSpec, points: &[GamPoint], lambda_smooth: f64, lambda_repetition: f64) -> Result<GamFit> {
    if !(lambda_smooth >= 0.0 && lambda_repetition >= 0.0) {
        return Err(Error::Invalid("smoothing parameters must be nonnegative".into()));
    }
    fit_gam_impl(spec, points, Some((lambda_smooth, lambda_repetition)))
}

fn fit_gam_impl(spec: &GamSpec, points: &[GamPoint], fixed: Option<(f64, f64)>) -> Result<GamFit> {
    if spec.k < 4 {
        return Err(Error::Invalid(format!("basis size {} is below 4", spec.k)));
    }
    if !(spec.ci_level > 0.0 && spec.ci_level < 1.0) {
        return Err(Error::Invalid("confidence level must lie in (0, 1)".into()));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Invalid("non-finite GAM data point".into()));
    }
    let mut by_level: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        by_level.entry(&p.level).or_default().push(i);
    }
    if by_level.is_empty() {
        return Err(Error::Invalid("no data points".into()));
    }
    for (level, rows) in &by_level {
        let mut xs: Vec<f64> = rows.iter().map(|&i| points[i].x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if rows.len() < spec.k || xs.len() < spec.k {
            return Err(Error::Invalid(format!(
                "level `{level}` has {} points ({} distinct covariate values); a smooth with k = {} needs at least {}",
                rows.len(),
                xs.len(),
                spec.k,
                spec.k
            )));
        }
    }
    let mut repetitions: Vec<String> = points.iter().map(|p| p.repetition.clone()).collect();
    repetitions.sort();
    repetitions.dedup();
    let has_reps = repetitions.len() > 1;

    let n = points.len();
    let n_levels = by_level.len();
    let mut col = n_levels;
    let mut levels = Vec::new();
    for (li, (level, rows)) in by_level.iter().enumerate() {
        let xs: Vec<f64> = rows.iter().map(|&i| points[i].x).collect();
        let spline = CubicSpline::at_quantiles(&xs, spec.k)?;
        let mut csum = DVector::zeros(spec.k);
        for &x in &xs {
            csum += spline.basis(x);
        }
        let constraint = null_space_of(&csum);
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        levels.push(LevelSmooth {
            level: level.to_string(),
            spline,
            constraint,
            offset: col,
            intercept: (li > 0).then_some(li),
            range: (lo, hi),
            edf: 0.0,
        });
        col += spec.k - 1;
    }
    let repetition_offset = has_reps.then_some(col);
    let p = col + if has_reps { repetitions.len() } else { 0 };

    let level_index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.level.as_str(), i)).collect();
    let mut x = DMatrix::zeros(n, p);
    for (i, pt) in points.iter().enumerate() {
        x[(i, 0)] = 1.0;
        let l = &levels[level_index[pt.level.as_str()]];
        if let Some(j) = l.intercept {
            x[(i, j)] = 1.0;
        }
        let r = l.row(pt.x);
        for (j, v) in r.iter().enumerate() {
            x[(i, l.offset + j)] = *v;
        }
        if let Some(off) = repetition_offset {
            x[(i, off + repetitions.binary_search(&pt.repetition).expect("label present"))] = 1.0;
        }
    }
    let y = DVector::from_iterator(n, points.iter().map(|p| p.y));
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;

    let mut smooth_penalty = DMatrix::zeros(p, p);
    for l in &levels {
        let m = l.constraint.ncols();
        let s = l.constraint.transpose() * &l.spline.penalty * &l.constraint;
        let block = xtx.view((l.offset, l.offset), (m, m));
        let scale = block.norm() / s.norm();
        smooth_penalty.view_mut((l.offset, l.offset), (m, m)).copy_from(&(s * scale));
    }
    let mut ridge = DVector::zeros(p);
    if let Some(off) = repetition_offset {
        let mean_count = n as f64 / repetitions.len() as f64;
        ridge.rows_mut(off, repetitions.len()).fill(mean_count);
    }
    let model = Model { x, xtx, xty, yty: y.norm_squared(), smooth_penalty, ridge };

    let (ls, lr) = match fixed {
        Some(l) => l,
        None => {
            let pow = |v: f64| 10f64.powf(v);
            let score = |a: f64, b: f64| model.solve(pow(a), pow(b)).map(|s| s.gcv).unwrap_or(f64::INFINITY);
            let rep_axis = |lo, hi, step| if has_reps { grid(lo, hi, step) } else { vec![0.0] };
            let search = |sa: Vec<f64>, ra: Vec<f64>| {
                let mut best = (f64::INFINITY, sa[0], ra[0]);
                for &a in &sa {
                    for &b in &ra {
                        let g = score(a, b);
                        if g < best.0 {
                            best = (g, a, b);
                        }
                    }
                }
                best
            };
            let (_, a, b) = search(grid(COARSE.0, COARSE.1, COARSE.2), rep_axis(COARSE.0, COARSE.1, COARSE.2));
            let fine = |c: f64| grid(c - COARSE.2, c + COARSE.2, FINE_STEP);
            let (_, a, b) = search(fine(a), if has_reps { fine(b) } else { vec![0.0] });
            (pow(a), if has_reps { pow(b) } else { 0.0 })
        }
    };
    let sol = model
        .solve(ls, lr)
        .ok_or_else(|| Error::Numerical("penalized GAM system is singular or saturated".into()))?;
    let sigma2 = sol.rss / (n as f64 - sol.trace);
    let influence = &sol.ainv * &model.xtx;
    for l in &mut levels {
        l.edf = (0..l.constraint.ncols()).map(|j| influence[(l.offset + j, l.offset + j)]).sum();
    }
    let fitted = (&model.x * &sol.beta).iter().copied().collect();
    let mut covariance = sol.ainv * sigma2;
    covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(GamFit {
        spec: *spec,
        levels,
        repetitions: if has_reps { repetitions } else { vec![] },
        repetition_offset,
        coefficients: sol.beta,
        covariance,
        lambda_smooth: ls,
        lambda_repetition: lr,
        sigma2,
        gcv: sol.gcv,
        edf: sol.trace,
        n,
        fitted,
    })
}

/// Orthonormal basis (`k × (k−1)`) of vectors orthogonal to `c`.
fn null_space_of(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let mut v = c.clone();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * c.norm();
    let h = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / v.norm_squared());
    h.columns(1, k - 1).into_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceCurve {
    pub level_a: String,
    pub level_b: String,
    pub x: Vec<f64>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub significant: Vec<bool>,
    /// Maximal runs of significant grid points, as `(first x, last x)`.
    pub intervals: Vec<(f64, f64)>,
}

impl DifferenceCurve {
    pub fn significant_fraction(&self) -> f64 {
        self.significant.iter().filter(|s| **s).count() as f64 / self.significant.len() as f64
    }
}

pub const DIFFERENCE_GRID: usize = 200;

/// `(α + γ_a + s_a) − (α + γ_b + s_b)` over the shared covariate range.
pub fn difference_smooth(fit: &GamFit, level_a: &str, level_b: &str, grid_size: usize) -> Result<DifferenceCurve> {
    let a = fit.level(level_a)?;
    let b = fit.level(level_b)?;
    if grid_size < 2 {
        return Err(Error::Invalid("difference grid needs at least two points".into()));
    }
    let lo = a.range.0.max(b.range.0);
    let hi = a.range.1.min(b.range.1);
    if lo >= hi {
        return Err(Error::Invalid(format!("covariate ranges of `{level_a}` and `{level_b}` do not overlap")));
    }
    let z = fit.critical_value();
    let mut out = DifferenceCurve {
        level_a: level_a.into(),
        level_b: level_b.into(),
        x: Vec::with_capacity(grid_size),
        estimate: Vec::with_capacity(grid_size),
        se: Vec::with_capacity(grid_size),
        lo: Vec::with_capacity(grid_size),
        hi: Vec::with_capacity(grid_size),
        significant: Vec::with_capacity(grid_size),
        intervals: Vec::new(),
    };
    for i in 0..grid_size {
        let x = lo + (hi - lo) * i as f64 / (grid_size - 1) as f64;
        let mut c = DVector::zeros(fit.coefficients.len());
        fit.contrast(a, x, 1.0, &mut c);
        fit.contrast(b, x, -1.0, &mut c);
        let d = c.dot(&fit.coefficients);
        let se = c.dot(&(&fit.covariance * &c)).max(0.0).sqrt();
        out.x.push(x);
        out.estimate.push(d);
        out.se.push(se);
        out.lo.push(d - z * se);
        out.hi.push(d + z * se);
        out.significant.push(d.abs() > z * se);
    }
    let mut start = None;
    for i in 0..=grid_size {
        let sig = i < grid_size && out.significant[i];
        match (sig, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.intervals.push((out.x[s], out.x[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
