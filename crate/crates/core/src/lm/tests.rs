
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::check_cases;
use crate::corpus::{BOS, EOS};
use crate::tensor::logsumexp;

pub(crate) fn toy_spec(kind: ModelKind, layers: usize, vocab: usize) -> ArchitectureSpec {
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

fn random_sentence(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<usize> {
    let mut s = vec![BOS];
    s.extend((0..len).map(|_| rng.random_range(3..vocab)));
    s
}

#[test]
fn full_size_parameter_counts() {
    assert_eq!(count_parameters(&ArchitectureSpec::gru(10_137, 1)), 9_673_137);
    assert_eq!(count_parameters(&ArchitectureSpec::transformer(10_137, 1)), 9_581_961);
    let delta = count_parameters(&ArchitectureSpec::gru(10_137, 2)) - 9_673_137;
    assert_eq!(delta, 3 * (500 * 500 + 500 * 500 + 500 + 500));
    assert_eq!(delta, 1_503_000);
}

#[test]
fn parameter_formula_is_linear_in_vocab() {
    for v in [10, 1000, 10_137] {
        assert_eq!(count_parameters(&ArchitectureSpec::gru(v, 1)), 801 * v + 1_553_400);
        assert_eq!(count_parameters(&ArchitectureSpec::transformer(v, 1)), 801 * v + 1_462_224);
    }
}

#[test]
fn initialized_tensors_match_declared_count() {
    for kind in [ModelKind::Gru, ModelKind::Transformer] {
        for layers in [1, 2, 4] {
            let spec = toy_spec(kind, layers, 30);
            let m = init_model(&spec, 1).unwrap();
            assert_eq!(m.num_parameters(), count_parameters(&spec));
            m.validate().unwrap();
        }
    }
}

#[test]
fn embeddings_shared_across_kinds() {
    let gru = init_model(&ArchitectureSpec { embed_dim: 16, ..toy_spec(ModelKind::Gru, 1, 50) }, 11).unwrap();
    let tf = init_model(&ArchitectureSpec { embed_dim: 16, ..toy_spec(ModelKind::Transformer, 2, 50) }, 11).unwrap();
    assert_eq!(gru.tensor("embedding"), tf.tensor("embedding"));
    assert_eq!(init_model(&gru.spec, 11).unwrap(), gru);
}

#[test]
fn different_seeds_give_different_embeddings() {
    let spec = toy_spec(ModelKind::Gru, 1, 200);
    for s in 0..10u64 {
        let a = init_model(&spec, s).unwrap();
        let b = init_model(&spec, s + 100).unwrap();
        let ea = a.tensor("embedding").data();
        let eb = b.tensor("embedding").data();
        let differing = ea.iter().zip(eb).filter(|(x, y)| x != y).count();
        assert!(differing as f64 >= 0.99 * ea.len() as f64);
    }
}

#[test]
fn invalid_specs_rejected() {
    let mut s = toy_spec(ModelKind::Transformer, 1, 20);
    s.heads = 3;
    assert!(init_model(&s, 0).is_err());
    s = toy_spec(ModelKind::Gru, 0, 20);
    assert!(init_model(&s, 0).is_err());
}

#[test]
fn rows_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in [ModelKind::Gru, ModelKind::Transformer] {
        let m = init_model(&toy_spec(kind, 2, 25), 3).unwrap();
        let s = random_sentence(&mut rng, 25, 9);
        let lp = m.forward_log_probs(&s).unwrap();
        assert_eq!(lp.shape(), [10, 25]);
        for r in 0..lp.rows() {
            assert!(logsumexp(lp.row(r)).abs() < 1e-9);
        }
    }
}

#[test]
fn out_of_range_ids_are_errors() {
    let m = init_model(&toy_spec(ModelKind::Gru, 1, 25), 3).unwrap();
    assert!(matches!(m.forward_log_probs(&[0, 25]), Err(Error::TokenOutOfRange { id: 25, vocab: 25 })));
}

#[test]
fn perturbing_the_future_leaves_the_past_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for kind in [ModelKind::Gru, ModelKind::Transformer] {
        let m = init_model(&toy_spec(kind, 2, 30), 4).unwrap();
        for _ in 0..10 {
            let s = random_sentence(&mut rng, 30, 8);
            let t = rng.random_range(0..s.len() - 1);
            let mut p = s.clone();
            p[t + 1] = 3 + (p[t + 1] - 3 + 1 + rng.random_range(0..26)) % 27;
            let a = m.forward_log_probs(&s).unwrap();
            let b = m.forward_log_probs(&p).unwrap();
            for r in 0..=t {
                assert_eq!(a.row(r), b.row(r), "{kind} row {r} changed");
            }
        }
    }
}

#[test]
fn stepwise_gru_matches_whole_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for layers in [1, 2] {
        let m = init_model(&toy_spec(ModelKind::Gru, layers, 40), 8).unwrap();
        let s = random_sentence(&mut rng, 40, 12);
        let whole = m.forward_log_probs(&s).unwrap();
        let mut stepper = GruStepper::new(&m);
        for (t, &tok) in s.iter().enumerate() {
            let row = stepper.step(tok);
            for (a, b) in row.data().iter().zip(whole.row(t)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn batched_training_graph_matches_single_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for kind in [ModelKind::Gru, ModelKind::Transformer] {
        let m = init_model(&toy_spec(kind, 2, 30), 4).unwrap();
        let seqs: Vec<Vec<usize>> = (0..4)
            .map(|i| {
                let mut s = random_sentence(&mut rng, 30, 2 + i * 2);
                s.push(EOS);
                s
            })
            .collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let (loss, _) = m.loss_and_gradients(&refs).unwrap();
        let mut total = 0.0;
        let mut n = 0;
        for s in &seqs {
            let lp = m.forward_log_probs(&s[..s.len() - 1]).unwrap();
            for t in 1..s.len() {
                total -= lp.get(t - 1, s[t]);
                n += 1;
            }
        }
        assert!((loss - total / n as f64).abs() < 1e-12, "{kind}: {loss} vs {}", total / n as f64);
    }
}

#[test]
fn single_layer_attention_ignores_prefix_order_without_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut spec = toy_spec(ModelKind::Transformer, 1, 30);
    spec.position_encoding = false;
    let m = init_model(&spec, 6).unwrap();
    for _ in 0..5 {
        let s = random_sentence(&mut rng, 30, 6);
        let t = s.len() - 1;
        let mut p = s.clone();
        p[..t].reverse();
        let a = m.forward_log_probs(&s).unwrap();
        let b = m.forward_log_probs(&p).unwrap();
        for (x, y) in a.row(t).iter().zip(b.row(t)) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn uniform_output_gives_log_vocab_surprisal() {
    let mut spec = toy_spec(ModelKind::Gru, 1, 10_137);
    spec.embed_dim = 4;
    let mut m = init_model(&spec, 0).unwrap();
    m.tensors.get_mut("out.w").unwrap().data_mut().fill(0.0);
    let s = m.surprisal(&[5, 17, 400, 10_000]).unwrap();
    assert_eq!(s.len(), 5);
    for v in s {
        assert!((v - 10_137f64.ln()).abs() < 1e-12);
        assert!((v - 9.2240).abs() < 1e-4);
    }
}

#[test]
fn certain_prediction_gives_zero_surprisal() {
    let mut m = init_model(&toy_spec(ModelKind::Transformer, 1, 20), 0).unwrap();
    m.tensors.get_mut("out.w").unwrap().data_mut().fill(0.0);
    m.tensors.get_mut("out.b").unwrap().set(0, 7, 800.0);
    let s = m.surprisal(&[7, 7, 7]).unwrap();
    assert_eq!(&s[..3], &[0.0, 0.0, 0.0]);
}

#[test]
fn surprisal_is_negative_log_prob_entry() {
    let m = init_model(&toy_spec(ModelKind::Gru, 1, 20), 3).unwrap();
    let words = [4, 9, 13];
    let s = surprisal_of(&m, &words).unwrap();
    let lp = m.forward_log_probs(&[BOS, 4, 9, 13, EOS]).unwrap();
    assert_eq!(s, vec![-lp.get(0, 4), -lp.get(1, 9), -lp.get(2, 13), -lp.get(3, EOS)]);
    assert!(s.iter().all(|&v| v >= 0.0));
}

#[test]
fn full_loss_gradients_pass_grad_check() {
    for kind in [ModelKind::Gru, ModelKind::Transformer] {
        for layers in [1, 2] {
            let report = check_loss_gradients(&toy_spec(kind, layers, 20), 10, 30, 1e-2).unwrap();
            assert!(report.max_error < 1e-5, "{kind}{layers}: {report:?}");
            assert!(report.on_kink * 100 < report.components, "{report:?}");
        }
    }
}

#[test]
fn gru_step_and_attention_gradients() {
    for (name, report) in check_cases(composite_cases(), 10, 4, 1e-3).unwrap() {
        let tol = if name == "gru_step" { 1e-6 } else { 1e-5 };
        assert!(report.max_error < tol, "{name}: {report:?}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = init_model(&toy_spec(ModelKind::Transformer, 2, 30), 3).unwrap();
    m.sentences_seen = 1234;
    m.checkpoint_tag = "1K".into();
    let path = dir.path().join(m.file_name());
    assert!(path.ends_with("transformer2_s3_1K.ckpt"));
    m.save(&path, Precision::F64).unwrap();
    let back = ModelCheckpoint::load(&path).unwrap();
    assert_eq!(back, m);
    let s = [BOS, 5, 6, 7];
    assert_eq!(back.forward_log_probs(&s).unwrap(), m.forward_log_probs(&s).unwrap());

    m.save(&path, Precision::F32).unwrap();
    let narrow = ModelCheckpoint::load(&path).unwrap();
    for (a, b) in narrow.tensors.values().zip(m.tensors.values()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-7 * y.abs().max(1e-30));
        }
    }
    std::fs::write(&path, b"garbage").unwrap();
    assert!(ModelCheckpoint::load(&path).is_err());
}

#[test]
fn average_log_prob() {
    let row = |s: f64| SurprisalRow {
        model: ModelKind::Gru,
        layers: 1,
        seed: 0,
        checkpoint: "x".into(),
        sentence_id: 1,
        position: 1,
        word: "w".into(),
        surprisal: s,
    };
    let v = 10_137f64.ln();
    assert!((avg_log_prob(&[row(v), row(v)]).unwrap() + v).abs() < 1e-15);
    assert_eq!(avg_log_prob(&[row(1.0), row(3.0)]).unwrap(), -2.0);
    assert!(avg_log_prob(&[]).is_err());
}

#[test]
fn surprisal_table_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = crate::corpus::Vocabulary::from_entries(vec![("the".into(), 3), ("cat".into(), 2)]).unwrap();
    let m = init_model(&toy_spec(ModelKind::Gru, 1, vocab.len()), 1).unwrap();
    let table = SurprisalTable::for_sentences(&m, &vocab, &[(7, vec!["the".into(), "cat".into()])]).unwrap();
    assert_eq!(table.rows.len(), 3);
    assert_eq!(table.rows[2].word, "</s>");
    let path = dir.path().join("s.csv");
    table.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("model,layers,seed,checkpoint,sentence_id,position,word,surprisal\n"));
    assert_eq!(SurprisalTable::read_csv(&path).unwrap(), table);
    assert!(SurprisalTable::for_sentences(&m, &vocab, &[(1, vec!["dog".into()])]).is_err());
}
