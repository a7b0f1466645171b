//! Linear mixed-effects regression: design construction, ML fits,
//! goodness-of-fit and collinearity diagnostics.

mod fit;
pub mod optim;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use fit::{fit_ml, fit_ml_with, profiled_deviance, Convergence, FitOptions, MixedFit, DEVIANCE_TOLERANCE, MAX_EVALUATIONS};

use crate::error::{Error, Result};
use crate::reading::{Dataset, PredictorTable};
use crate::stats::{ols, pearson};

/// A scalar random effect: `covariate × indicator(level)` with its own
/// variance. Terms are mutually independent.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomTerm {
    pub name: String,
    pub levels: Vec<usize>,
    pub n_levels: usize,
    /// `None` for an intercept.
    pub covariate: Option<Vec<f64>>,
}

impl RandomTerm {
    pub fn intercept(name: impl Into<String>, levels: Vec<usize>) -> Self {
        let n_levels = levels.iter().max().map_or(0, |m| m + 1);
        Self { name: name.into(), levels, n_levels, covariate: None }
    }

    pub fn slope(name: impl Into<String>, levels: Vec<usize>, covariate: Vec<f64>) -> Self {
        Self { covariate: Some(covariate), ..Self::intercept(name, levels) }
    }

    pub(crate) fn value(&self, row: usize) -> f64 {
        self.covariate.as_ref().map_or(1.0, |c| c[row])
    }
}

/// Response, fixed-effect matrix and random terms of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub fixed_names: Vec<String>,
    pub random: Vec<RandomTerm>,
}

impl Design {
    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x.nrows() != n || self.fixed_names.len() != self.x.ncols() {
            return Err(Error::Invalid("design dimensions disagree".into()));
        }
        if n < self.x.ncols() + 2 {
            return Err(Error::Invalid(format!("{n} rows is too few for {} fixed effects", self.x.ncols())));
        }
        for t in &self.random {
            if t.levels.len() != n || t.covariate.as_ref().is_some_and(|c| c.len() != n) {
                return Err(Error::Invalid(format!("random term `{}` has the wrong length", t.name)));
            }
        }
        if self.y.iter().chain(self.x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite value in the design".into()));
        }
        Ok(())
    }

    /// Same design with rows reordered as `order`.
    pub fn permuted(&self, order: &[usize]) -> Design {
        Design {
            y: order.iter().map(|&i| self.y[i]).collect(),
            x: self.x.select_rows(order.iter()),
            fixed_names: self.fixed_names.clone(),
            random: self
                .random
                .iter()
                .map(|t| RandomTerm {
                    name: t.name.clone(),
                    levels: order.iter().map(|&i| t.levels[i]).collect(),
                    n_levels: t.n_levels,
                    covariate: t.covariate.as_ref().map(|c| order.iter().map(|&i| c[i]).collect()),
                })
                .collect(),
        }
    }
}

/// Fixed and random structure of a regression on a [`PredictorTable`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFormula {
    pub mains: Vec<String>,
    /// All pairwise products of `mains`.
    pub interactions: bool,
    /// Additional fixed effects that never interact.
    pub extra: Vec<String>,
    pub subject_intercept: bool,
    /// Uncorrelated by-subject slopes.
    pub subject_slopes: Vec<String>,
    pub item_intercept: bool,
}

impl ModelFormula {
    pub fn baseline(dataset: Dataset) -> Self {
        let mains: Vec<String> = dataset.main_effects().iter().map(|s| s.to_string()).collect();
        Self {
            subject_slopes: mains.clone(),
            mains,
            interactions: true,
            extra: vec![],
            subject_intercept: true,
            item_intercept: true,
        }
    }

    pub fn with_surprisal(dataset: Dataset) -> Self {
        Self { extra: dataset.surprisal_terms().iter().map(|s| s.to_string()).collect(), ..Self::baseline(dataset) }
    }

    pub fn fixed_names(&self) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string()];
        names.extend(self.mains.iter().cloned());
        if self.interactions {
            for i in 0..self.mains.len() {
                for j in i + 1..self.mains.len() {
                    names.push(format!("{}:{}", self.mains[i], self.mains[j]));
                }
            }
        }
        names.extend(self.extra.iter().cloned());
        names
    }
}

pub fn build_design(formula: &ModelFormula, table: &PredictorTable) -> Result<Design> {
    let n = table.len();
    let col = |name: &str| -> Result<&[f64]> {
        table
            .column(name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::Invalid(format!("no predictor column `{name}`")))
    };
    if let Some(s) = formula.extra.iter().find(|e| formula.mains.contains(e)) {
        return Err(Error::Invalid(format!("`{s}` is listed both as a main effect and as an extra term")));
    }
    let mains: Vec<&[f64]> = formula.mains.iter().map(|m| col(m)).collect::<Result<_>>()?;
    let extra: Vec<&[f64]> = formula.extra.iter().map(|m| col(m)).collect::<Result<_>>()?;

    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    columns.extend(mains.iter().map(|c| c.to_vec()));
    if formula.interactions {
        for i in 0..mains.len() {
            for j in i + 1..mains.len() {
                columns.push(mains[i].iter().zip(mains[j]).map(|(a, b)| a * b).collect());
            }
        }
    }
    columns.extend(extra.iter().map(|c| c.to_vec()));
    let names = formula.fixed_names();
    let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    check_rank(&x, &names)?;

    let subjects = table.subject_labels.len();
    let mut random = Vec::new();
    if formula.subject_intercept {
        random.push(RandomTerm { n_levels: subjects, ..RandomTerm::intercept("subject", table.subject.clone()) });
    }
    for s in &formula.subject_slopes {
        let term = RandomTerm::slope(format!("subject:{s}"), table.subject.clone(), col(s)?.to_vec());
        random.push(RandomTerm { n_levels: subjects, ..term });
    }
    if formula.item_intercept {
        let term = RandomTerm::intercept("item", table.item.clone());
        random.push(RandomTerm { n_levels: table.item_labels.len(), ..term });
    }
    Ok(Design { y: table.y.clone(), x, fixed_names: names, random })
}

/// Errors naming every column that is (numerically) a linear combination of
/// the columns before it.
pub fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let p = x.ncols();
    let xtx = x.transpose() * x;
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut kept = vec![false; p];
    let mut aliased = Vec::new();
    for j in 0..p {
        let mut d = xtx[(j, j)];
        for k in 0..j {
            if kept[k] {
                d -= l[(j, k)] * l[(j, k)];
            }
        }
        if d <= 1e-9 * xtx[(j, j)].max(f64::MIN_POSITIVE) {
            aliased.push(names[j].clone());
            continue;
        }
        kept[j] = true;
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..p {
            let mut s = xtx[(i, j)];
            for k in 0..j {
                if kept[k] {
                    s -= l[(i, k)] * l[(j, k)];
                }
            }
            l[(i, j)] = s / djj;
        }
    }
    if aliased.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient(aliased))
    }
}

/// Deviance reduction from adding the surprisal terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    /// Signed score: negated when the surprisal effect has the wrong sign.
    pub value: f64,
    /// `deviance_base − deviance_full`.
    pub deviance_reduction: f64,
    pub surprisal_coefficient: f64,
    pub flagged_negative: bool,
}

pub fn goodness_of_fit(base: &MixedFit, full: &MixedFit, surprisal_coefficient: f64) -> Result<GoodnessOfFit> {
    if base.n != full.n {
        return Err(Error::Invalid(format!("base fit has {} rows, full fit {}", base.n, full.n)));
    }
    if let Some(missing) = base.fixed_names.iter().find(|n| !full.fixed_names.contains(n)) {
        return Err(Error::Invalid(format!("full model lacks base term `{missing}`")));
    }
    let reduction = base.deviance - full.deviance;
    let flagged = surprisal_coefficient < 0.0;
    Ok(GoodnessOfFit {
        value: if flagged { -reduction } else { reduction },
        deviance_reduction: reduction,
        surprisal_coefficient,
        flagged_negative: flagged,
    })
}

pub const VIF_THRESHOLD: f64 = 15.0;
pub const CORRELATION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollinearityReport {
    pub names: Vec<String>,
    pub vif: Vec<f64>,
    /// `(i, j, r)` for `i < j`.
    pub correlations: Vec<(usize, usize, f64)>,
    pub flags: Vec<String>,
}

impl CollinearityReport {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Variance inflation factors and pairwise correlations of `columns`.
pub fn collinearity_check(columns: &[(&str, &[f64])]) -> Result<CollinearityReport> {
    if columns.len() < 3 {
        return Err(Error::Invalid("collinearity check needs at least three columns".into()));
    }
    let n = columns[0].1.len();
    if columns.iter().any(|(_, c)| c.len() != n) {
        return Err(Error::Invalid("columns differ in length".into()));
    }
    let mut flags = Vec::new();
    let mut vif = Vec::with_capacity(columns.len());
    for (j, (name, target)) in columns.iter().enumerate() {
        let others: Vec<&[f64]> = columns.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, c)| c.1).collect();
        let x = DMatrix::from_fn(n, others.len() + 1, |i, k| if k == 0 { 1.0 } else { others[k - 1][i] });
        let y = DVector::from_column_slice(target);
        let mean = y.mean();
        let tss = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        let v = match ols(&x, &y) {
            Ok(f) if f.rss > 1e-12 * tss => tss / f.rss,
            _ => f64::INFINITY,
        };
        if v > VIF_THRESHOLD {
            flags.push(format!("VIF of {name} is {v:.1}"));
        }
        vif.push(v);
    }
    let mut correlations = Vec::new();
    for i in 0..columns.len() {
        for j in i + 1..columns.len() {
            let r = pearson(columns[i].1, columns[j].1);
            if r.abs() > CORRELATION_THRESHOLD {
                flags.push(format!("r({}, {}) = {r:.3}", columns[i].0, columns[j].0));
            }
            correlations.push((i, j, r));
        }
    }
    Ok(CollinearityReport { names: columns.iter().map(|c| c.0.to_string()).collect(), vif, correlations, flags })
}
