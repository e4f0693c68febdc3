use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{generate_synthetic, Vocab};
use crate::hmm::HmmParams;
use crate::numerics::sgd_step;
use crate::potentials::{EmissionMode, ModelConfig, TransitionMode};

fn corpus(k: usize, v: usize, n: usize, seed: u64) -> (Vocab, Vec<Sentence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hmm = HmmParams::random(k, v, &mut rng).unwrap();
    let (vocab, c) = generate_synthetic(&hmm, n, 12, seed).unwrap();
    (vocab, c.sentences)
}

fn model(k: usize, em: EmissionMode, tr: TransitionMode, vocab: Vocab, seed: u64) -> NeuralHmm {
    let mut c = ModelConfig::new(k, em, tr);
    c.hidden = 8;
    c.cnn_filters_per_width = 3;
    c.cnn_max_width = 3;
    c.char_embed_dim = 4;
    c.max_word_len = 8;
    c.lstm_layers = 2;
    c.dropout = 0.0;
    NeuralHmm::new(c, vocab, seed).unwrap()
}

fn grads_of(model: &NeuralHmm, g: &Graph, loss: Var) -> Vec<Vec<f64>> {
    let mut store = model.params().clone();
    store.zero_grads();
    let grads = g.backward(loss);
    g.accumulate_param_grads(&grads, &mut store);
    store
        .iter()
        .map(|(_, p)| {
            p.tensor
                .grad()
                .map_or_else(|| vec![0.0; p.tensor.len()], <[f64]>::to_vec)
        })
        .collect()
}

fn assert_close(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) {
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!(
            (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())),
            "{x} vs {y}"
        );
    }
}

/// At the posteriors of the current parameters, the surrogate and the
/// marginal likelihood share a gradient.
#[test]
fn surrogate_gradient_matches_marginal_gradient() {
    for (em, tr) in [
        (EmissionMode::Lookup, TransitionMode::Static),
        (EmissionMode::CharCnn, TransitionMode::Lstm),
    ] {
        let (vocab, sents) = corpus(3, 9, 6, 11);
        let m = model(3, em, tr, vocab, 5);
        let batch: Vec<&Sentence> = sents.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g1 = Graph::new();
        let dml = dml_loss(&mut g1, &m, &batch, false, &mut rng).unwrap();
        let post = batch_posteriors(&m, &batch).unwrap();
        let mut g2 = Graph::new();
        let surr = em_surrogate_loss(&mut g2, &m, &batch, &post, false, &mut rng).unwrap();
        assert_close(&grads_of(&m, &g1, dml.loss), &grads_of(&m, &g2, surr), 1e-8);
        // values differ by the posterior entropy, which is positive here
        assert!(g2.value(surr).data()[0] > g1.value(dml.loss).data()[0]);
    }
}

#[test]
fn single_tag_surrogate_equals_marginal() {
    let (vocab, sents) = corpus(1, 6, 5, 2);
    let m = model(1, EmissionMode::Lookup, TransitionMode::Static, vocab, 1);
    let batch: Vec<&Sentence> = sents.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g1 = Graph::new();
    let dml = dml_loss(&mut g1, &m, &batch, false, &mut rng).unwrap();
    let post = batch_posteriors(&m, &batch).unwrap();
    let mut g2 = Graph::new();
    let surr = em_surrogate_loss(&mut g2, &m, &batch, &post, false, &mut rng).unwrap();
    let (a, b) = (g1.value(dml.loss).data()[0], g2.value(surr).data()[0]);
    assert!((a - b).abs() < 1e-9 * a.abs(), "{a} vs {b}");
    assert_close(&grads_of(&m, &g1, dml.loss), &grads_of(&m, &g2, surr), 1e-9);
}

#[test]
fn small_gradient_step_decreases_loss_to_first_order() {
    let (vocab, sents) = corpus(3, 8, 8, 4);
    let mut m = model(3, EmissionMode::Lookup, TransitionMode::Static, vocab, 9);
    let batch: Vec<&Sentence> = sents.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = Graph::new();
    let l0 = dml_loss(&mut g, &m, &batch, false, &mut rng).unwrap();
    let before = g.value(l0.loss).data()[0];
    let grads = grads_of(&m, &g, l0.loss);
    let sq: f64 = grads.iter().flatten().map(|x| x * x).sum();
    let store = m.params_mut();
    let gr = g.backward(l0.loss);
    g.accumulate_param_grads(&gr, store);
    let lr = 1e-5;
    sgd_step(store, lr);
    let mut g = Graph::new();
    let l1 = dml_loss(&mut g, &m, &batch, false, &mut rng).unwrap();
    let after = g.value(l1.loss).data()[0];
    let predicted = -lr * sq;
    let observed = after - before;
    assert!(observed < 0.0);
    assert!(
        (observed - predicted).abs() < 0.05 * predicted.abs(),
        "{observed} vs {predicted}"
    );
}

#[test]
fn convergence_rule() {
    assert!(has_converged(-100.0, -99.999, 1e-4));
    assert!(!has_converged(-100.0, -99.0, 1e-4));
    assert!(!has_converged(100.0, 90.0, 1e-4));
    assert!(has_converged(100.0, 100.0, 1e-4));
    assert!(has_converged(0.0, 0.0, 1e-4));
    assert!(!has_converged(0.0, 1.0, 1e-4));
}

#[test]
fn inner_loop_caps_and_stops() {
    let (vocab, sents) = corpus(3, 8, 6, 3);
    let batch: Vec<&Sentence> = sents.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cfg = TrainConfig {
        inner_convergence: 1e-300,
        ..TrainConfig::default()
    };
    let mut m = model(
        3,
        EmissionMode::Lookup,
        TransitionMode::Static,
        vocab.clone(),
        1,
    );
    let out = inner_loop(&mut m, &batch, &cfg, &mut rng).unwrap();
    assert_eq!(out.steps, 6);
    assert_eq!(out.losses.len(), 6);
    // a tolerance that any change satisfies stops after the first update
    cfg.inner_convergence = 10.0;
    let mut m = model(3, EmissionMode::Lookup, TransitionMode::Static, vocab, 1);
    let out = inner_loop(&mut m, &batch, &cfg, &mut rng).unwrap();
    assert_eq!((out.steps, out.losses.len()), (1, 2));
    for objective in [Objective::Dml, Objective::Em] {
        cfg.objective = objective;
        cfg.inner_convergence = 1e-4;
        let out = inner_loop(&mut m, &batch, &cfg, &mut rng).unwrap();
        assert!((1..=6).contains(&out.steps));
    }
}

#[test]
fn batches_follow_filter_and_size() {
    let (vocab, mut sents) = corpus(2, 5, 23, 8);
    for s in sents.iter_mut().take(3) {
        s.words = vec![s.words[0]; 15];
        s.chars = vec![s.chars[0].clone(); 15];
    }
    let mut m = model(2, EmissionMode::Lookup, TransitionMode::Static, vocab, 0);
    let cfg = TrainConfig {
        batch_size: 6,
        max_len: 12,
        epochs: 2,
        max_inner_loops: 2,
        ..TrainConfig::default()
    };
    let r = train(&mut m, &sents, &cfg).unwrap();
    assert_eq!((r.train_sentences, r.skipped_sentences), (20, 3));
    for e in 0..2 {
        let sizes: Vec<usize> = r.epoch_batches(e).map(|b| b.sentences).collect();
        assert_eq!(sizes, [6, 6, 6, 2]);
    }
    assert_eq!(r.epochs.len(), 2);
    assert!(r.batches.iter().all(|b| (1..=2).contains(&b.steps)));
}

#[test]
fn report_is_reproducible() {
    let (vocab, sents) = corpus(3, 7, 30, 6);
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 2,
        seed: 42,
        ..TrainConfig::default()
    };
    let run = || {
        let mut c = ModelConfig::new(3, EmissionMode::Lookup, TransitionMode::Lstm);
        c.hidden = 6;
        c.lstm_layers = 1;
        let mut m = NeuralHmm::new(c, vocab.clone(), 3).unwrap();
        train(&mut m, &sents, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(a.checksum.len(), 64);
    let text = a.to_jsonl();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + a.batches.len() + 2 + 1);
    assert!(lines[0].contains("\"record\":\"config\""));
    assert!(!lines.iter().any(|l| l.contains("wall")));
    for l in &lines {
        serde_json::from_str::<serde_json::Value>(l).unwrap();
    }
}

#[test]
fn dropout_changes_training_loss_only() {
    let (vocab, sents) = corpus(2, 6, 4, 1);
    let mut c = ModelConfig::new(2, EmissionMode::Lookup, TransitionMode::Lstm);
    c.hidden = 6;
    c.lstm_layers = 1;
    let m = NeuralHmm::new(c, vocab, 2).unwrap();
    let batch: Vec<&Sentence> = sents.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let value = |training: bool, rng: &mut ChaCha8Rng| {
        let mut g = Graph::new();
        let l = dml_loss(&mut g, &m, &batch, training, rng).unwrap();
        g.value(l.loss).data()[0]
    };
    let (e1, e2) = (value(false, &mut rng), value(false, &mut rng));
    assert_eq!(e1.to_bits(), e2.to_bits());
    assert_ne!(value(true, &mut rng), value(true, &mut rng));
}

#[test]
fn rejects_bad_configs_and_empty_data() {
    let (vocab, sents) = corpus(2, 5, 3, 0);
    let mut m = model(2, EmissionMode::Lookup, TransitionMode::Static, vocab, 0);
    let cfg = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&mut m, &sents, &cfg), Err(Error::Config(_))));
    let cfg = TrainConfig {
        max_len: 1,
        ..TrainConfig::default()
    };
    let short: Vec<Sentence> = sents.into_iter().filter(|s| s.len() > 1).collect();
    assert!(matches!(train(&mut m, &short, &cfg), Err(Error::Data(_))));
    let mut post = batch_posteriors(&m, &[&short[0]]).unwrap();
    post.push(post[0].clone());
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = em_surrogate_loss(&mut g, &m, &[&short[0]], &post, false, &mut rng);
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn gradient_check_catches_a_loss_that_ignores_the_parameters() {
    use crate::numerics::finite_diff_check;
    let (model, corpus) = {
        let mut vocab = crate::data::Vocab::new();
        let c = crate::data::parse_corpus(
            "the dog chased a cat\na cat sat\n",
            crate::data::CorpusFormat::Tokens,
            &mut vocab,
        )
        .unwrap();
        let mut cfg = crate::potentials::ModelConfig::new(
            3,
            crate::potentials::EmissionMode::Lookup,
            crate::potentials::TransitionMode::Static,
        );
        cfg.hidden = 8;
        cfg.dropout = 0.0;
        (NeuralHmm::new(cfg, vocab, 0).unwrap(), c)
    };
    let batch: Vec<&crate::data::Sentence> = corpus.sentences.iter().collect();
    let mut store = model.params().clone();
    let frozen = model.clone();
    let rep = finite_diff_check(&mut store, 1e-5, 0, |_| {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = dml_loss(&mut g, &frozen, &batch, false, &mut rng)?.loss;
        Ok((g, loss))
    })
    .unwrap();
    assert!(rep.max_rel_error > 0.5);
    let good = check_dml_gradient(&model, &batch, 1e-5, 0).unwrap();
    assert_eq!(good.coords_checked, rep.coords_checked);
    assert!(good.max_rel_error <= 1e-4);
}
