use criterion::{black_box, criterion_group, criterion_main, Criterion};
use readlm_core::gam::{fit_gam, GamPoint, GamSpec};
use readlm_core::lm::init_model;
use readlm_core::mixed::{build_design, fit_ml, ModelFormula};
use readlm_core::synth::CrossedSim;
use readlm_core::ArchitectureSpec;

fn small(kind: &str, layers: usize) -> ArchitectureSpec {
    ArchitectureSpec {
        embed_dim: 32,
        gru_hidden: 48,
        gru_proj: 32,
        heads: 4,
        ffn_dim: 64,
        ..ArchitectureSpec::new(kind.parse().unwrap(), 2000, layers)
    }
}

fn lm(c: &mut Criterion) {
    let batch: Vec<Vec<usize>> = (0..10).map(|b| (0..12).map(|t| 3 + (b * 31 + t * 17) % 1900).collect()).collect();
    let seqs: Vec<&[usize]> = batch.iter().map(Vec::as_slice).collect();
    for (kind, layers) in [("gru", 1), ("gru", 2), ("transformer", 1), ("transformer", 2)] {
        let model = init_model(&small(kind, layers), 1).unwrap();
        c.bench_function(&format!("loss_and_gradients/{kind}-{layers}"), |b| {
            b.iter(|| model.loss_and_gradients(black_box(&seqs)).unwrap())
        });
    }
}

fn mixed(c: &mut Criterion) {
    let sim = CrossedSim {
        subjects: 20,
        items: 100,
        beta: vec![0.0, 0.3, -0.2],
        gamma: 0.1,
        sd_subject: 0.5,
        sd_slope: 0.2,
        sd_item: 0.3,
        sd_residual: 1.0,
    };
    let table = sim.simulate(3);
    let formula = ModelFormula {
        mains: sim.predictor_names(),
        interactions: false,
        extra: vec!["surprisal".into()],
        subject_intercept: true,
        subject_slopes: vec!["x1".into()],
        item_intercept: true,
    };
    let design = build_design(&formula, &table).unwrap();
    let mut g = c.benchmark_group("mixed");
    g.sample_size(10);
    g.bench_function("fit_ml/2000_rows", |b| b.iter(|| fit_ml(black_box(&design)).unwrap()));
    g.finish();
}

fn gam(c: &mut Criterion) {
    let points: Vec<GamPoint> = (0..160)
        .map(|i| {
            let x = -6.0 + (i % 40) as f64 * 0.05;
            GamPoint {
                x,
                y: 20.0 * (x + 6.0) + ((i * 7919) % 13) as f64 * 0.3,
                level: format!("m{}", i / 40),
                repetition: format!("s{}", i % 4),
            }
        })
        .collect();
    c.bench_function("fit_gam/4_levels", |b| b.iter(|| fit_gam(&GamSpec::default(), black_box(&points)).unwrap()));
}

criterion_group!(benches, lm, mixed, gam);
criterion_main!(benches);
