//! Maximum-likelihood fits through the profiled deviance.
//!
//! With relative covariance factor `Λ(θ)` (diagonal here) the deviance
//! profiled over `β` and `σ²` is
//! `log|L|² + n (1 + log(2π r²/n))`, where `L Lᵀ = ΛᵀZᵀZΛ + I` and `r²` is
//! the minimal penalized residual sum of squares. The random term with the
//! most levels has a diagonal cross-product block and is eliminated in
//! closed form; its Schur contribution is accumulated per distinct
//! diagonal value so each evaluation only touches one dense block.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::nelder_mead;
use super::Design;
use crate::error::{Error, Result};

/// Bounds on `log θ`; below the lower bound a component is numerically zero.
const LOG_THETA_MIN: f64 = -20.0;
const LOG_THETA_MAX: f64 = 10.0;
pub const MAX_EVALUATIONS: usize = 2000;
pub const DEVIANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub evaluations: usize,
    pub restarts: usize,
    pub simplex_range: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub fixed_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub random_names: Vec<String>,
    /// Relative standard deviations `σ_k / σ`.
    pub theta: Vec<f64>,
    /// `σ² θ_k²` per random term.
    pub variance_components: Vec<f64>,
    pub residual_variance: f64,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub n: usize,
    pub convergence: Convergence,
}

impl MixedFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.fixed_names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.fixed_names.iter().position(|n| n == name).map(|i| self.std_errors[i])
    }

    pub fn variance_component(&self, name: &str) -> Option<f64> {
        self.random_names.iter().position(|n| n == name).map(|i| self.variance_components[i])
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Starting `θ`; defaults to all ones.
    pub start: Option<Vec<f64>>,
    pub max_evaluations: Option<usize>,
}

/// Per distinct diagonal value of the eliminated block.
struct Group {
    /// `Σ z²` of each level in the group.
    key: f64,
    levels: usize,
    m: DMatrix<f64>,
    g: DVector<f64>,
    h: f64,
}

struct Profile {
    n: usize,
    p: usize,
    /// Columns of the dense block owned by random terms.
    q: usize,
    /// Term index whose columns are eliminated, if any.
    elim: Option<usize>,
    /// Column offset of each non-eliminated term in the dense block.
    offsets: Vec<Option<usize>>,
    rtr: DMatrix<f64>,
    rty: DVector<f64>,
    yty: f64,
    groups: Vec<Group>,
}

struct Solution {
    deviance: f64,
    r2: f64,
    chol: Cholesky<f64, nalgebra::Dyn>,
    v: DVector<f64>,
}

impl Profile {
    fn new(design: &Design) -> Self {
        let n = design.y.len();
        let p = design.x.ncols();
        let elim = (0..design.random.len()).max_by_key(|&k| (design.random[k].n_levels, std::cmp::Reverse(k)));
        let mut offsets = vec![None; design.random.len()];
        let mut q = 0;
        for (k, term) in design.random.iter().enumerate() {
            if Some(k) != elim {
                offsets[k] = Some(q);
                q += term.n_levels;
            }
        }
        let dim = q + p;

        // Each row of R = [Z_rest, X] has one nonzero per non-eliminated term.
        let row = |i: usize, idx: &mut Vec<usize>, val: &mut Vec<f64>| {
            idx.clear();
            val.clear();
            for (k, term) in design.random.iter().enumerate() {
                if let Some(off) = offsets[k] {
                    idx.push(off + term.levels[i]);
                    val.push(term.value(i));
                }
            }
            for j in 0..p {
                idx.push(q + j);
                val.push(design.x[(i, j)]);
            }
        };

        let mut rtr = DMatrix::zeros(dim, dim);
        let mut rty = DVector::zeros(dim);
        let (mut idx, mut val) = (Vec::new(), Vec::new());
        for i in 0..n {
            row(i, &mut idx, &mut val);
            for (a, &ia) in idx.iter().enumerate() {
                rty[ia] += val[a] * design.y[i];
                for (b, &ib) in idx.iter().enumerate() {
                    rtr[(ia, ib)] += val[a] * val[b];
                }
            }
        }
        let yty = design.y.iter().map(|v| v * v).sum();

        let mut groups = Vec::new();
        if let Some(e) = elim {
            let term = &design.random[e];
            let mut w = DMatrix::zeros(term.n_levels, dim);
            let mut ysum = vec![0.0; term.n_levels];
            let mut zz = vec![0.0; term.n_levels];
            for i in 0..n {
                let l = term.levels[i];
                let z = term.value(i);
                row(i, &mut idx, &mut val);
                for (a, &ia) in idx.iter().enumerate() {
                    w[(l, ia)] += z * val[a];
                }
                ysum[l] += z * design.y[i];
                zz[l] += z * z;
            }
            let mut by_key: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (l, z) in zz.iter().enumerate() {
                by_key.entry(z.to_bits()).or_default().push(l);
            }
            for (key, levels) in by_key {
                let rows = w.select_rows(levels.iter());
                let yv = DVector::from_iterator(levels.len(), levels.iter().map(|&l| ysum[l]));
                groups.push(Group {
                    key: f64::from_bits(key),
                    levels: levels.len(),
                    m: rows.transpose() * &rows,
                    g: rows.transpose() * &yv,
                    h: yv.norm_squared(),
                });
            }
        }
        Self { n, p, q, elim, offsets, rtr, rty, yty, groups }
    }

    /// Diagonal of `Λ̃`: `θ` of the owning term on random columns, 1 on `X`.
    fn scale(&self, design: &Design, theta: &[f64]) -> DVector<f64> {
        let mut s = DVector::from_element(self.q + self.p, 1.0);
        for (k, term) in design.random.iter().enumerate() {
            if let Some(off) = self.offsets[k] {
                s.rows_mut(off, term.n_levels).fill(theta[k]);
            }
        }
        s
    }

    fn solve(&self, design: &Design, theta: &[f64]) -> Option<Solution> {
        let dim = self.q + self.p;
        let a2 = self.elim.map(|e| theta[e] * theta[e]).unwrap_or(0.0);
        let mut inner = self.rtr.clone();
        let mut rhs = self.rty.clone();
        let mut h = 0.0;
        let mut logdet = 0.0;
        for grp in &self.groups {
            let c = a2 / (a2 * grp.key + 1.0);
            inner.zip_apply(&grp.m, |a, b| *a -= c * b);
            rhs.axpy(-c, &grp.g, 1.0);
            h += c * grp.h;
            logdet += grp.levels as f64 * (a2 * grp.key).ln_1p();
        }
        let s = self.scale(design, theta);
        for j in 0..dim {
            for i in 0..dim {
                inner[(i, j)] *= s[i] * s[j];
            }
            rhs[j] *= s[j];
        }
        for j in 0..self.q {
            inner[(j, j)] += 1.0;
        }
        let chol = Cholesky::new(inner)?;
        let v = chol.solve(&rhs);
        let r2 = self.yty - h - v.dot(&rhs);
        let l = chol.l_dirty();
        logdet += (0..self.q).map(|j| 2.0 * l[(j, j)].ln()).sum::<f64>();
        let n = self.n as f64;
        let deviance = logdet + n * (1.0 + (2.0 * std::f64::consts::PI * r2 / n).ln());
        if !deviance.is_finite() || r2 <= 0.0 {
            return None;
        }
        Some(Solution { deviance, r2, chol, v })
    }

    fn finish(&self, design: &Design, theta: Vec<f64>, sol: Solution, convergence: Convergence) -> MixedFit {
        let n = self.n as f64;
        let sigma2 = sol.r2 / n;
        let beta: Vec<f64> = sol.v.rows(self.q, self.p).iter().copied().collect();
        let l = sol.chol.l();
        let lbb = l.view((self.q, self.q), (self.p, self.p)).into_owned();
        let linv = lbb
            .solve_lower_triangular(&DMatrix::identity(self.p, self.p))
            .expect("Cholesky factor has a positive diagonal");
        let cov = linv.transpose() * linv * sigma2;
        MixedFit {
            fixed_names: design.fixed_names.clone(),
            std_errors: (0..self.p).map(|j| cov[(j, j)].sqrt()).collect(),
            coefficients: beta,
            random_names: design.random.iter().map(|t| t.name.clone()).collect(),
            variance_components: theta.iter().map(|t| sigma2 * t * t).collect(),
            theta,
            residual_variance: sigma2,
            log_likelihood: -sol.deviance / 2.0,
            deviance: sol.deviance,
            n: self.n,
            convergence,
        }
    }
}

fn theta_of(phi: &[f64]) -> Vec<f64> {
    phi.iter().map(|p| p.clamp(LOG_THETA_MIN, LOG_THETA_MAX).exp()).collect()
}

pub fn fit_ml(design: &Design) -> Result<MixedFit> {
    fit_ml_with(design, &FitOptions::default())
}

/// Minimizes the profiled deviance over `log θ` with Nelder–Mead. A
/// converged run is polished by one short restart; a run that exhausts the
/// budget is restarted once from a perturbed point.
pub fn fit_ml_with(design: &Design, options: &FitOptions) -> Result<MixedFit> {
    design.validate()?;
    let profile = Profile::new(design);
    let k = design.random.len();
    let budget = options.max_evaluations.unwrap_or(MAX_EVALUATIONS);
    let objective = |phi: &[f64]| profile.solve(design, &theta_of(phi)).map(|s| s.deviance).unwrap_or(f64::INFINITY);

    let start: Vec<f64> = match &options.start {
        Some(t) if t.len() == k => t.iter().map(|v| v.max(f64::MIN_POSITIVE).ln().clamp(LOG_THETA_MIN, LOG_THETA_MAX)).collect(),
        Some(t) => return Err(Error::Invalid(format!("{} starting values for {k} random terms", t.len()))),
        None => vec![0.0; k],
    };

    let mut run = nelder_mead(objective, &start, 1.0, DEVIANCE_TOLERANCE, budget);
    let mut evaluations = run.evaluations;
    let mut restarts = 0;
    if k > 0 {
        let retry_from = if run.converged {
            run.x.clone()
        } else {
            run.x.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.5 } else { -0.5 }).collect()
        };
        let step = if run.converged { 0.1 } else { 1.0 };
        let second = nelder_mead(objective, &retry_from, step, DEVIANCE_TOLERANCE, budget);
        evaluations += second.evaluations;
        restarts = 1;
        let converged = second.converged;
        if second.value <= run.value {
            run = second;
        }
        run.converged = converged;
    }

    let theta = theta_of(&run.x);
    let sol = profile
        .solve(design, &theta)
        .ok_or_else(|| Error::Numerical("profiled deviance is not finite at any θ tried".into()))?;
    let convergence = Convergence { evaluations, restarts, simplex_range: run.simplex_range, converged: run.converged };
    let fit = profile.finish(design, theta, sol, convergence);
    if !fit.convergence.converged {
        return Err(Error::NotConverged { evaluations, best_deviance: fit.deviance, best: Box::new(fit) });
    }
    Ok(fit)
}

/// Profiled deviance at a fixed `θ`.
pub fn profiled_deviance(design: &Design, theta: &[f64]) -> Result<f64> {
    design.validate()?;
    if theta.len() != design.random.len() || theta.iter().any(|t| *t < 0.0) {
        return Err(Error::Invalid("θ must have one nonnegative entry per random term".into()));
    }
    Profile::new(design)
        .solve(design, theta)
        .map(|s| s.deviance)
        .ok_or_else(|| Error::Numerical("penalized system is singular".into()))
}
