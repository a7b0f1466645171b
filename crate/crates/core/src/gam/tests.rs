use super::*;
use crate::seeded_rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

fn points(seed: u64, levels: &[(&str, f64)], per_level: usize, sd: f64, f: impl Fn(f64) -> f64) -> Vec<GamPoint> {
    let mut rng = seeded_rng(seed, 0);
    let mut out = Vec::new();
    for (name, offset) in levels {
        for i in 0..per_level {
            let x: f64 = rng.random();
            let e: f64 = StandardNormal.sample(&mut rng);
            out.push(GamPoint { x, y: f(x) + offset + sd * e, level: name.to_string(), repetition: format!("r{}", i % 4) });
        }
    }
    out
}

fn single(xs: &[f64], f: impl Fn(f64) -> f64) -> Vec<GamPoint> {
    xs.iter().map(|&x| GamPoint { x, y: f(x), level: "a".into(), repetition: "r".into() }).collect()
}

#[test]
fn exact_line_is_reproduced() {
    let xs: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
    let fit = fit_gam(&GamSpec::default(), &single(&xs, |x| 3.0 - 1.5 * x)).unwrap();
    let grid: Vec<f64> = (0..50).map(|i| -1.9 + i as f64 * 0.075).collect();
    for (x, (est, _)) in grid.iter().zip(fit.level_curve("a", &grid).unwrap()) {
        assert!((est - (3.0 - 1.5 * x)).abs() < 1e-6, "{x}: {est}");
    }
}

#[test]
fn recovers_a_sine() {
    let pts = points(1, &[("a", 0.0)], 400, 0.1, |x| (2.0 * PI * x).sin());
    let fit = fit_gam(&GamSpec::default(), &pts).unwrap();
    let grid: Vec<f64> = (0..200).map(|i| 0.01 + 0.98 * i as f64 / 199.0).collect();
    let curve = fit.level_curve("a", &grid).unwrap();
    // The repetition intercepts are population-level zero; compare the curve.
    let mse = grid.iter().zip(&curve).map(|(x, (e, _))| (e - (2.0 * PI * x).sin()).powi(2)).sum::<f64>() / 200.0;
    assert!(mse.sqrt() < 0.1, "rmse {}", mse.sqrt());
    assert!(fit.levels[0].edf > 4.0);
}

#[test]
fn smooths_sum_to_zero_and_edf_are_similar() {
    let pts = points(2, &[("a", 0.0), ("b", 0.0)], 150, 0.3, |x| x * x);
    let fit = fit_gam(&GamSpec::default(), &pts).unwrap();
    for l in &fit.levels {
        let s: f64 = pts.iter().filter(|p| p.level == l.level).map(|p| fit.smooth(&l.level, p.x).unwrap()).sum();
        assert!(s.abs() < 1e-8, "{}: {s}", l.level);
    }
    assert!((fit.levels[0].edf - fit.levels[1].edf).abs() < 1.0);
    let c = &fit.covariance;
    assert!((c - c.transpose()).norm() < 1e-12);
    assert!(c.clone().symmetric_eigenvalues().iter().all(|v| *v > -1e-10));
}

#[test]
fn huge_penalty_gives_a_line() {
    let pts = points(3, &[("a", 0.0)], 100, 0.1, |x| (2.0 * PI * x).sin());
    let fit = fit_gam_with_lambda(&GamSpec::default(), &pts, 1e9, 1.0).unwrap();
    let v: Vec<f64> = (0..11).map(|i| fit.smooth("a", 0.05 + 0.09 * i as f64).unwrap()).collect();
    let second: f64 = v.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).fold(0.0, f64::max);
    let slope = (v[10] - v[0]).abs();
    assert!(second < 1e-6 * slope.max(1e-3), "{second} vs {slope}");
}

#[test]
fn standard_errors_shrink_with_n() {
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let grid: Vec<f64> = (0..50).map(|i| 0.05 + 0.9 * i as f64 / 49.0).collect();
    let se_at = |seed: u64, n: usize| {
        let pts = points(seed, &[("a", 0.0)], n, 0.2, |x| x.sin());
        let fit = fit_gam_with_lambda(&GamSpec::default(), &pts, 1.0, 1.0).unwrap();
        median(fit.level_curve("a", &grid).unwrap().iter().map(|c| c.1).collect())
    };
    let small: Vec<f64> = (0..20).map(|s| se_at(100 + s, 100)).collect();
    let large: Vec<f64> = (0..20).map(|s| se_at(200 + s, 200)).collect();
    let ratio = median(small) / median(large);
    assert!((1.2..=1.6).contains(&ratio), "{ratio}");
}

#[test]
fn difference_of_a_level_with_itself_is_zero() {
    let pts = points(4, &[("a", 0.0), ("b", 0.5)], 80, 0.2, |x| x);
    let fit = fit_gam(&GamSpec::default(), &pts).unwrap();
    let d = difference_smooth(&fit, "a", "a", DIFFERENCE_GRID).unwrap();
    assert!(d.estimate.iter().chain(&d.se).all(|v| *v == 0.0));
    assert!(d.intervals.is_empty());
    let d = difference_smooth(&fit, "b", "a", DIFFERENCE_GRID).unwrap();
    assert_eq!(d.x.len(), DIFFERENCE_GRID);
    let z = fit.critical_value();
    for i in 0..d.x.len() {
        assert!((d.hi[i] - d.estimate[i] - z * d.se[i]).abs() < 1e-12);
    }
    assert!(d.significant_fraction() > 0.9, "{}", d.significant_fraction());
}

#[test]
fn duplicated_levels_give_a_flat_zero_difference() {
    let a = points(5, &[("a", 0.0)], 60, 0.3, |x| x * x);
    let b: Vec<GamPoint> = a.iter().map(|p| GamPoint { level: "b".into(), ..p.clone() }).collect();
    let fit = fit_gam(&GamSpec::default(), &[a, b].concat()).unwrap();
    let d = difference_smooth(&fit, "a", "b", DIFFERENCE_GRID).unwrap();
    assert!(d.estimate.iter().all(|v| v.abs() < 1e-8));
    assert!(d.intervals.is_empty());
}

#[test]
fn input_errors() {
    let few = points(6, &[("a", 0.0), ("tiny", 0.0)], 20, 0.1, |x| x);
    let few: Vec<GamPoint> = few.into_iter().filter(|p| p.level == "a" || p.x < 0.3).collect();
    match fit_gam(&GamSpec::default(), &few) {
        Err(Error::Invalid(m)) => assert!(m.contains("tiny"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(fit_gam(&GamSpec { k: 3, ..Default::default() }, &few).is_err());

    let mut pts = single(&(0..20).map(|i| i as f64 / 20.0).collect::<Vec<_>>(), |x| x);
    pts.extend(single(&(0..20).map(|i| 5.0 + i as f64 / 20.0).collect::<Vec<_>>(), |x| x).into_iter().map(|p| GamPoint {
        level: "far".into(),
        ..p
    }));
    let fit = fit_gam(&GamSpec::default(), &pts).unwrap();
    assert!(difference_smooth(&fit, "a", "far", 50).is_err());
    assert!(difference_smooth(&fit, "a", "missing", 50).is_err());
}

#[test]
fn panels_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let types = [("GRU-1", 0.0), ("GRU-2", 0.0), ("TF-1", 0.0), ("TF-2", 1.0)];
    let mut panels = Vec::new();
    for (d, name) in ["SPR", "ET", "EEG"].iter().enumerate() {
        let pts = points(10 + d as u64, &types, 40, 0.2, |x| 2.0 * x);
        let fit = fit_gam(&GamSpec::default(), &pts).unwrap();
        let curves = [("GRU-1", "TF-2"), ("GRU-1", "GRU-2"), ("TF-1", "TF-2")]
            .iter()
            .map(|(a, b)| difference_smooth(&fit, a, b, DIFFERENCE_GRID).unwrap())
            .collect();
        panels.push(DatasetPanels { name: name.to_string(), points: pts, fit, curves, grid: 100 });
    }
    let report = emit_panels(&panels, dir.path()).unwrap();
    let svgs: Vec<_> = report.files.iter().filter(|f| f.extension().unwrap() == "svg").collect();
    assert_eq!(svgs.len(), 9);
    assert_eq!(report.files.iter().filter(|f| f.to_string_lossy().contains("_diff_")).count(), 9);
    assert!(report.ticks.iter().all(|(_, t)| *t > 0));
    let table = std::fs::read_to_string(dir.path().join("SPR_diff_GRU-1_vs_TF-2.csv")).unwrap();
    assert!(table.starts_with("x,estimate,se,lo,hi,significant\n"));
    assert_eq!(table.lines().count(), DIFFERENCE_GRID + 1);

    // No significant points, no ticks.
    let pts = points(20, &[("a", 0.0), ("b", 0.0)], 40, 0.2, |x| x);
    let fit = fit_gam(&GamSpec::default(), &pts).unwrap();
    let curve = difference_smooth(&fit, "a", "a", 50).unwrap();
    let one = DatasetPanels { name: "EEG".into(), points: pts, fit, curves: vec![curve], grid: 50 };
    let report = emit_panels(&[one], dir.path()).unwrap();
    assert_eq!(report.ticks, vec![("EEG".to_string(), 0)]);

    assert!(emit_panels(&panels[..1], std::path::Path::new("/proc/definitely/not/writable")).is_err());
}
