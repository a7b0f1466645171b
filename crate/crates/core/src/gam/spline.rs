//! Cubic regression splines parameterized by their values at the knots.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    pub knots: Vec<f64>,
    /// Maps knot values to second derivatives at the knots (`k × k`).
    f: DMatrix<f64>,
    /// `∫ f''(x)² dx = βᵀ S β`.
    pub penalty: DMatrix<f64>,
}

impl CubicSpline {
    /// `k` knots at evenly spaced quantiles of `x`.
    pub fn at_quantiles(x: &[f64], k: usize) -> Result<Self> {
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let knots: Vec<f64> = (0..k).map(|i| quantile_sorted(&sorted, i as f64 / (k - 1) as f64)).collect();
        Self::new(knots)
    }

    pub fn new(knots: Vec<f64>) -> Result<Self> {
        let k = knots.len();
        if k < 3 || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("spline knots must be at least three strictly increasing values".into()));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut d = DMatrix::zeros(k - 2, k);
        let mut b = DMatrix::zeros(k - 2, k - 2);
        for i in 0..k - 2 {
            d[(i, i)] = 1.0 / h[i];
            d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
            d[(i, i + 2)] = 1.0 / h[i + 1];
            b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
            if i + 1 < k - 2 {
                b[(i, i + 1)] = h[i + 1] / 6.0;
                b[(i + 1, i)] = h[i + 1] / 6.0;
            }
        }
        let chol = b.cholesky().ok_or_else(|| Error::Numerical("spline band matrix is not positive definite".into()))?;
        let binv_d = chol.solve(&d);
        let penalty = d.transpose() * &binv_d;
        let mut f = DMatrix::zeros(k, k);
        f.rows_mut(1, k - 2).copy_from(&binv_d);
        Ok(Self { knots, f, penalty })
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    /// Basis row at `x`; linear beyond the end knots.
    pub fn basis(&self, x: f64) -> DVector<f64> {
        let k = self.knots.len();
        let mut row = DVector::zeros(k);
        if x < self.knots[0] || x > self.knots[k - 1] {
            let (j, edge) = if x < self.knots[0] { (0, self.knots[0]) } else { (k - 2, self.knots[k - 1]) };
            let at = self.basis(edge);
            let h = self.knots[j + 1] - self.knots[j];
            // Slope at the end knot from the end interval's cubic.
            let mut slope = DVector::zeros(k);
            slope[j] -= 1.0 / h;
            slope[j + 1] += 1.0 / h;
            let (cm, cp) = if j == 0 { (-h / 3.0, -h / 6.0) } else { (h / 6.0, h / 3.0) };
            slope += self.f.row(j).transpose() * cm + self.f.row(j + 1).transpose() * cp;
            return at + slope * (x - edge);
        }
        let j = match self.knots.iter().position(|&t| t > x) {
            Some(p) => p.saturating_sub(1).min(k - 2),
            None => k - 2,
        };
        let (lo, hi) = (self.knots[j], self.knots[j + 1]);
        let h = hi - lo;
        let am = (hi - x) / h;
        let ap = (x - lo) / h;
        let cm = ((hi - x).powi(3) / h - h * (hi - x)) / 6.0;
        let cp = ((x - lo).powi(3) / h - h * (x - lo)) / 6.0;
        row[j] += am;
        row[j + 1] += ap;
        row += self.f.row(j).transpose() * cm + self.f.row(j + 1).transpose() * cp;
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knot_values_and_reproduces_lines() {
        let s = CubicSpline::new(vec![0.0, 0.3, 0.5, 1.2, 2.0]).unwrap();
        let beta = DVector::from_vec(s.knots.iter().map(|x| 2.0 * x - 1.0).collect());
        for &x in &[-0.5, 0.0, 0.1, 0.3, 0.77, 1.9, 2.0, 2.5] {
            let v = s.basis(x).dot(&beta);
            assert!((v - (2.0 * x - 1.0)).abs() < 1e-12, "{x}: {v}");
        }
        assert!((&s.penalty * &beta).norm() < 1e-10);
        let b = s.basis(0.5);
        assert!((b[2] - 1.0).abs() < 1e-12 && b.sum() - 1.0 < 1e-12);
    }

    #[test]
    fn penalty_matches_integrated_curvature() {
        // f(x) = x² has f'' = 2, so ∫₀² f''² = 8; the natural spline through
        // the knot values has slightly less curvature energy.
        let knots: Vec<f64> = (0..9).map(|i| i as f64 * 0.25).collect();
        let s = CubicSpline::new(knots.clone()).unwrap();
        let beta = DVector::from_vec(knots.iter().map(|x| x * x).collect());
        let e = beta.dot(&(&s.penalty * &beta));
        assert!(e > 6.0 && e < 8.0, "{e}");
    }
}
