//! One line per acceptance criterion, `criterion N: PASS|FAIL ...`, written
//! straight to stderr so it shows up without `--nocapture`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use readlm::analyze::{analyze, read_fits};
use readlm::compare::compare;
use readlm::preprocess::{load_prepared, preprocess};
use readlm::synthesize::synthesize;
use readlm::train::{checkpoint_paths, read_manifest, train_all};
use readlm::{Overrides, PipelineConfig};
use readlm_core::autodiff::{check_cases, primitive_cases};
use readlm_core::corpus::BOS;
use readlm_core::gam::{difference_smooth, fit_gam, GamPoint, GamSpec, DIFFERENCE_GRID};
use readlm_core::lm::{avg_log_prob, check_loss_gradients, composite_cases, count_parameters, init_model};
use readlm_core::mixed::{build_design, collinearity_check, fit_ml, fit_ml_with, goodness_of_fit, Design, FitOptions, ModelFormula, RandomTerm};
use readlm_core::stats::{ols, spearman};
use readlm_core::synth::CrossedSim;
use readlm_core::{seeded_rng, ArchitectureSpec, Error, ModelCheckpoint, ModelKind, SurprisalTable};

fn report(n: usize, ok: bool, detail: impl std::fmt::Display) {
    let line = format!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(ok, "{line}");
}

fn z(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn toy(kind: ModelKind, layers: usize, vocab: usize) -> ArchitectureSpec {
    ArchitectureSpec {
        kind,
        layers,
        embed_dim: 8,
        gru_hidden: 6,
        gru_proj: 5,
        heads: 2,
        ffn_dim: 12,
        vocab_size: vocab,
        position_encoding: true,
    }
}

fn sentence(rng: &mut impl Rng, vocab: usize, len: usize) -> Vec<usize> {
    let mut s = vec![BOS];
    s.extend((0..len).map(|_| rng.random_range(3..vocab)));
    s
}

fn desk(out: &Path) -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let mut cfg = PipelineConfig::load(&path, &Overrides { output: Some(out.to_path_buf()), ..Default::default() }).unwrap();
    cfg.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    cfg
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn criterion_01_parameter_counts() {
    let gru = count_parameters(&ArchitectureSpec::gru(10_137, 1));
    let tf = count_parameters(&ArchitectureSpec::transformer(10_137, 1));
    report(1, gru == 9_673_137 && tf == 9_581_961, format!("gru-1 {gru}, transformer-1 {tf}"));
}

#[test]
fn criterion_02_gradient_suite() {
    let mut worst = (String::new(), 0.0f64);
    let mut cases = primitive_cases();
    cases.extend(composite_cases());
    let n_cases = cases.len();
    for (name, r) in check_cases(cases, 10, 17, 1e-3).unwrap() {
        if r.max_error >= worst.1 {
            worst = (name.to_string(), r.max_error);
        }
    }
    for kind in [ModelKind::Gru, ModelKind::Transformer] {
        for layers in [1, 2] {
            let r = check_loss_gradients(&toy(kind, layers, 20), 10, 31, 1e-2).unwrap();
            if r.max_error >= worst.1 {
                worst = (format!("{kind}-{layers} loss"), r.max_error);
            }
        }
    }
    report(2, worst.1 < 1e-5, format!("{n_cases} graphs + 4 LM losses, worst {} at {:.2e}", worst.0, worst.1));
}

#[test]
fn criterion_03_causality() {
    let mut rng = seeded_rng(303, 0);
    let mut changed = 0;
    let mut pairs = 0;
    for kind in [ModelKind::Gru, ModelKind::Transformer] {
        for i in 0..100 {
            let vocab = rng.random_range(10..40);
            let m = init_model(&toy(kind, 1 + i % 2, vocab), rng.random()).unwrap();
            let len = rng.random_range(2..12);
            let s = sentence(&mut rng, vocab, len);
            let t = rng.random_range(0..s.len() - 1);
            let mut p = s.clone();
            p[t + 1] = 3 + (p[t + 1] - 3 + rng.random_range(1..vocab - 3)) % (vocab - 3);
            let a = m.forward_log_probs(&s).unwrap();
            let b = m.forward_log_probs(&p).unwrap();
            if (0..=t).any(|r| a.row(r) != b.row(r)) {
                changed += 1;
            }
            pairs += 1;
        }
    }
    report(3, changed == 0, format!("{pairs} pairs, {changed} with a changed past row"));
}

#[test]
fn criterion_04_order_information() {
    fn case(rng: &mut impl Rng, layers: usize) -> f64 {
        let mut spec = toy(ModelKind::Transformer, layers, 30);
        spec.position_encoding = false;
        let m = init_model(&spec, rng.random()).unwrap();
        let len = rng.random_range(3..10);
        let s = sentence(rng, 30, len);
        let t = s.len() - 1;
        let mut p = s.clone();
        while p == s {
            p[..t].shuffle(rng);
        }
        let a = m.forward_log_probs(&s).unwrap();
        let b = m.forward_log_probs(&p).unwrap();
        a.row(t).iter().zip(b.row(t)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
    let mut rng = seeded_rng(404, 0);
    let one: Vec<f64> = (0..50).map(|_| case(&mut rng, 1)).collect();
    let two: Vec<f64> = (0..50).map(|_| case(&mut rng, 2)).collect();
    let worst_one = one.iter().copied().fold(0.0, f64::max);
    let broken = two.iter().filter(|d| **d > 1e-4).count();
    report(
        4,
        worst_one < 1e-9 && broken >= 45,
        format!("1-layer max difference {worst_one:.1e}; 2-layer differs on {broken}/50"),
    );
}

#[test]
fn criterion_05_trainer_sanity() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk(dir.path());
    cfg.training.architectures = ["gru-1", "gru-2", "transformer-1", "transformer-2"].iter().map(|a| a.parse().unwrap()).collect();
    cfg.training.seeds = vec![1];
    cfg.training.checkpoint_ladder = vec![300, 1000, 3000, 6000, 10_000];
    cfg.synthesize = None;
    preprocess(&cfg).unwrap();
    train_all(&cfg).unwrap();
    let prepared = load_prepared(&cfg).unwrap();
    let sentences: Vec<(u32, Vec<String>)> = prepared.stimuli.iter().map(|s| (s.sentence_id, s.words.clone())).collect();

    let mut ok = true;
    let mut parts = Vec::new();
    for &arch in &cfg.training.architectures {
        let m = read_manifest(&cfg, arch, 1).unwrap().unwrap();
        let bound = (m.config.spec.vocab_size as f64).ln();
        let quality: Vec<f64> = checkpoint_paths(&cfg, arch, 1, &m)
            .iter()
            .map(|(_, path)| {
                let model = ModelCheckpoint::load(path).unwrap();
                let table = SurprisalTable::for_sentences(&model, &prepared.vocab, &sentences).unwrap();
                avg_log_prob(table.rows.iter().filter(|r| r.word != "</s>")).unwrap()
            })
            .collect();
        let rising = quality.windows(2).filter(|w| w[1] >= w[0]).count();
        ok &= m.final_loss < bound && quality.len() == 6 && rising >= 4;
        parts.push(format!("{arch} loss {:.3} < {bound:.3}, {rising}/{} rising", m.final_loss, quality.len() - 1));
    }
    report(5, ok, parts.join("; "));
}

#[test]
fn criterion_06_mixed_oracles() {
    // (a) no random effects: ordinary least squares.
    let sim = CrossedSim {
        subjects: 12,
        items: 30,
        beta: vec![2.0, 0.5, -0.3],
        gamma: 0.2,
        sd_subject: 0.6,
        sd_slope: 0.2,
        sd_item: 0.4,
        sd_residual: 1.0,
    };
    let table = sim.simulate(61);
    let f = ModelFormula {
        mains: vec!["x1".into(), "x2".into()],
        interactions: true,
        extra: vec!["surprisal".into()],
        subject_intercept: false,
        subject_slopes: vec![],
        item_intercept: false,
    };
    let d = build_design(&f, &table).unwrap();
    let fit = fit_ml(&d).unwrap();
    let o = ols(&d.x, &DVector::from_vec(d.y.clone())).unwrap();
    let ols_err = fit.coefficients.iter().zip(o.coefficients.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // (b) balanced one-way layout against the closed-form ML estimates.
    let (g, n) = (20usize, 6usize);
    let mut rng = seeded_rng(62, 0);
    let mut y = Vec::new();
    let mut levels = Vec::new();
    for grp in 0..g {
        let a = 1.2 * z(&mut rng);
        for _ in 0..n {
            y.push(3.0 + a + z(&mut rng));
            levels.push(grp);
        }
    }
    let grand = y.iter().sum::<f64>() / y.len() as f64;
    let means: Vec<f64> = (0..g).map(|k| y[k * n..(k + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let ssw: f64 = y.iter().enumerate().map(|(i, v)| (v - means[i / n]).powi(2)).sum();
    let ssb: f64 = means.iter().map(|m| n as f64 * (m - grand).powi(2)).sum();
    let sigma2 = ssw / (g * (n - 1)) as f64;
    let tau2 = (ssb / g as f64 - sigma2) / n as f64;
    let design = Design {
        x: DMatrix::from_element(y.len(), 1, 1.0),
        y,
        fixed_names: vec!["(Intercept)".into()],
        random: vec![RandomTerm::intercept("group", levels)],
    };
    let one_way = fit_ml(&design).unwrap();
    let rel_b = ((one_way.residual_variance - sigma2) / sigma2).abs().max(((one_way.variance_components[0] - tau2) / tau2).abs());

    // (c) recovery over 20 replications.
    let sim = CrossedSim { subjects: 30, items: 40, sd_slope: 0.3, ..sim };
    let f = ModelFormula { subject_intercept: true, subject_slopes: vec!["x1".into()], item_intercept: true, ..f };
    let truth_beta = [("(Intercept)", 2.0), ("x1", 0.5), ("x2", -0.3), ("x1:x2", 0.0), ("surprisal", sim.gamma * sim.sd_residual)];
    let truth_var = [("subject", 0.36), ("subject:x1", 0.09), ("item", 0.16)];
    let fits: Vec<_> = (0..20u64)
        .into_par_iter()
        .map(|rep| fit_ml(&build_design(&f, &sim.simulate(6300 + rep)).unwrap()).unwrap())
        .collect();
    let mut misses = 0;
    for fit in &fits {
        for (name, b) in truth_beta {
            let est = fit.coefficient(name).unwrap();
            let se = fit.std_error(name).unwrap();
            if (est - b).abs() > 3.0 * se {
                misses += 1;
            }
        }
    }
    let mut worst_var = ("residual".to_string(), (fits.iter().map(|f| f.residual_variance).sum::<f64>() / 20.0 - 1.0).abs());
    for (name, v) in truth_var {
        let mean = fits.iter().map(|f| f.variance_component(name).unwrap()).sum::<f64>() / 20.0;
        let rel = ((mean - v) / v).abs();
        if rel > worst_var.1 {
            worst_var = (name.to_string(), rel);
        }
    }
    report(
        6,
        ols_err < 1e-8 && rel_b < 1e-4 && misses == 0 && worst_var.1 < 0.25,
        format!(
            "(a) OLS max diff {ols_err:.1e}; (b) one-way rel err {rel_b:.1e}; (c) {misses} of {} betas outside 3 se, worst variance {} off by {:.1}%",
            20 * truth_beta.len(),
            worst_var.0,
            100.0 * worst_var.1
        ),
    );
}

#[test]
fn criterion_07_goodness_of_fit() {
    let base_f = ModelFormula {
        mains: vec!["x1".into(), "x2".into()],
        interactions: false,
        extra: vec![],
        subject_intercept: true,
        subject_slopes: vec![],
        item_intercept: true,
    };
    let full_f = ModelFormula { extra: vec!["surprisal".into()], ..base_f.clone() };
    let gof = |gamma: f64, seed: u64| {
        let sim = CrossedSim {
            subjects: 25,
            items: 200,
            beta: vec![1.0, 0.3, -0.2],
            gamma,
            sd_subject: 0.5,
            sd_slope: 0.0,
            sd_item: 0.4,
            sd_residual: 1.0,
        };
        let t = sim.simulate(seed);
        let base = fit_ml(&build_design(&base_f, &t).unwrap()).unwrap();
        let design = build_design(&full_f, &t).unwrap();
        let full = match fit_ml_with(&design, &FitOptions { start: Some(base.theta.clone()), ..Default::default() }) {
            Err(Error::NotConverged { best, .. }) => *best,
            other => other.unwrap(),
        };
        goodness_of_fit(&base, &full, full.coefficient("surprisal").unwrap()).unwrap()
    };
    let effect: Vec<_> = (0..50u64).into_par_iter().map(|r| gof(0.15, 7100 + r)).collect();
    let null: Vec<_> = (0..50u64).into_par_iter().map(|r| gof(0.0, 7200 + r)).collect();
    let negative: Vec<_> = (0..10u64).into_par_iter().map(|r| gof(-0.15, 7300 + r)).collect();
    let detected = effect.iter().filter(|g| g.value > 3.84).count();
    let null_median = median(null.iter().map(|g| g.deviance_reduction).collect());
    let flagged = negative.iter().filter(|g| g.flagged_negative && g.value < 0.0).count();
    report(
        7,
        detected >= 45 && null_median < 3.84 && flagged == negative.len(),
        format!("gamma 0.15: {detected}/50 above 3.84; gamma 0: median {null_median:.2}; gamma -0.15: {flagged}/10 flagged"),
    );
}

#[test]
fn criterion_08_collinearity() {
    let mut rng = seeded_rng(808, 0);
    let n = 1000;
    let a: Vec<f64> = (0..n).map(|_| z(&mut rng)).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.1 * z(&mut rng)).collect();
    let c: Vec<f64> = (0..n).map(|_| z(&mut rng)).collect();
    let r = collinearity_check(&[("a", &a), ("b", &b), ("c", &c)]).unwrap();
    let vif_flags = r.flags.iter().filter(|f| f.starts_with("VIF of a") || f.starts_with("VIF of b")).count();
    let r_flag = r.flags.iter().any(|f| f.starts_with("r(a, b)"));
    let clean = !r.flags.iter().any(|f| f.starts_with("VIF of c") || f.contains(", c)") || f.starts_with("r(c"));
    report(
        8,
        r.vif[0] > 15.0 && r.vif[1] > 15.0 && vif_flags == 2 && r_flag && clean,
        format!("VIF {:.1}/{:.1}/{:.2}, flags {:?}", r.vif[0], r.vif[1], r.vif[2], r.flags),
    );
}

fn gam_points(seed: u64, levels: &[(&str, f64)], per_level: usize, sd: f64, f: impl Fn(f64) -> f64) -> Vec<GamPoint> {
    let mut rng = seeded_rng(seed, 0);
    let mut out = Vec::new();
    for (name, offset) in levels {
        for i in 0..per_level {
            let x: f64 = rng.random();
            out.push(GamPoint { x, y: f(x) + offset + sd * z(&mut rng), level: name.to_string(), repetition: format!("r{}", i % 4) });
        }
    }
    out
}

#[test]
fn criterion_09_gam_contract() {
    use std::f64::consts::PI;
    let spec = GamSpec::default();
    let sine = |x: f64| (2.0 * PI * x).sin();
    let fit = fit_gam(&spec, &gam_points(901, &[("a", 0.0)], 400, 0.1, sine)).unwrap();
    let grid: Vec<f64> = (0..200).map(|i| 0.01 + 0.98 * i as f64 / 199.0).collect();
    let curve = fit.level_curve("a", &grid).unwrap();
    let rmse = (grid.iter().zip(&curve).map(|(x, (e, _))| (e - sine(*x)).powi(2)).sum::<f64>() / grid.len() as f64).sqrt();

    let pts = gam_points(902, &[("a", 0.0), ("b", 0.3)], 100, 0.2, |x| x * x);
    let fit = fit_gam(&spec, &pts).unwrap();
    let same = difference_smooth(&fit, "a", "a", DIFFERENCE_GRID).unwrap();
    let self_max = same.estimate.iter().chain(&same.se).map(|v| v.abs()).fold(0.0, f64::max);

    let coverage = |offset: f64, seed: u64| {
        let pts = gam_points(seed, &[("a", 0.0), ("b", offset)], 100, 0.3, |x| x.sin());
        let fit = fit_gam(&spec, &pts).unwrap();
        difference_smooth(&fit, "b", "a", DIFFERENCE_GRID).unwrap().significant_fraction()
    };
    let null: Vec<f64> = (0..30u64).into_par_iter().map(|r| coverage(0.0, 9100 + r)).collect();
    let offset: Vec<f64> = (0..30u64).into_par_iter().map(|r| coverage(0.25, 9200 + r)).collect();
    let null_mean = null.iter().sum::<f64>() / null.len() as f64;
    let offset_mean = offset.iter().sum::<f64>() / offset.len() as f64;
    report(
        9,
        rmse < 0.1 && self_max == 0.0 && null_mean < 0.10 && offset_mean >= 0.50,
        format!(
            "sine rmse {rmse:.4}; self-difference max {self_max:e}; null coverage {:.1}%; offset coverage {:.1}%",
            100.0 * null_mean,
            100.0 * offset_mean
        ),
    );
}

#[test]
fn criterion_10_desk_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(dir.path());
    preprocess(&cfg).unwrap();
    train_all(&cfg).unwrap();
    synthesize(&cfg).unwrap();
    analyze(&cfg).unwrap();
    let compared = compare(&cfg).unwrap();
    let rows = read_fits(&cfg.layout().fits()).unwrap();

    let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.failed()) {
        let g = groups.entry((r.dataset.clone(), r.architecture().unwrap().to_string())).or_default();
        g.0.push(r.avg_log_prob);
        g.1.push(r.gof);
    }
    let mut ok = groups.len() == 4 && !compared.smooths.is_empty();
    let mut parts = Vec::new();
    for ((dataset, arch), (x, y)) in &groups {
        let rho = spearman(x, y);
        ok &= rho > 0.6;
        parts.push(format!("{dataset} {arch} rho {rho:.3} (n={})", x.len()));
    }
    report(10, ok, parts.join("; "));
}
