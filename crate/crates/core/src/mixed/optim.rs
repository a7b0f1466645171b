//! Nelder–Mead simplex minimization.

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Spread of objective values over the final simplex.
    pub simplex_range: f64,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with an axis-aligned initial simplex of size
/// `step`. Stops when the objective spread over the simplex drops below
/// `ftol` and the best value improved by less than `ftol` over the last
/// `n + 1` iterations, or after `max_evals` evaluations.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: f64, ftol: f64, max_evals: usize) -> Minimum {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let value = eval(x0, &mut evals);
        return Minimum { x: vec![], value, evaluations: evals, simplex_range: 0.0, converged: true };
    }

    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();
    let mut history: Vec<f64> = Vec::new();

    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let range = vals[n] - vals[0];
        history.push(vals[0]);
        let stalled = history.len() > n + 1 && history[history.len() - n - 2] - vals[0] < ftol;
        if (range.is_finite() && range < ftol && stalled) || evals >= max_evals {
            let converged = range.is_finite() && range < ftol && stalled;
            return Minimum { x: pts[0].clone(), value: vals[0], evaluations: evals, simplex_range: range, converged };
        }

        let mut centroid = vec![0.0; n];
        for p in &pts[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let reflected = combine(&centroid, &pts[n], -1.0);
        let fr = eval(&reflected, &mut evals);
        if fr < vals[0] {
            let expanded = combine(&centroid, &pts[n], -2.0);
            let fe = eval(&expanded, &mut evals);
            if fe < fr {
                pts[n] = expanded;
                vals[n] = fe;
            } else {
                pts[n] = reflected;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = reflected;
            vals[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < vals[n] {
            let c = combine(&centroid, &pts[n], -0.5);
            let fc = eval(&c, &mut evals);
            (c, fc)
        } else {
            let c = combine(&centroid, &pts[n], 0.5);
            let fc = eval(&c, &mut evals);
            (c, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = contracted;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            pts[i] = combine(&pts[0], &pts[i], 0.5);
            vals[i] = eval(&pts[i], &mut evals);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(rosen, &[-1.2, 1.0], 0.5, 1e-14, 5000);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn one_dimensional_and_budget() {
        let m = nelder_mead(|x| (x[0] - 3.0).powi(2), &[0.0], 1.0, 1e-12, 1000);
        assert!(m.converged && (m.x[0] - 3.0).abs() < 1e-5);
        let m = nelder_mead(|x| x.iter().map(|v| v * v).sum(), &[5.0; 6], 1.0, 1e-30, 50);
        assert!(!m.converged && m.evaluations >= 50);
    }
}
