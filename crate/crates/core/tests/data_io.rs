use nhmm::data::{
    generate_synthetic, normalize_token, parse_corpus, read_model, sample_sentences, write_model,
    CorpusFormat, Vocab, FORMAT_VERSION, MAGIC,
};
use nhmm::hmm::HmmParams;
use nhmm::numerics::Tensor;
use nhmm::potentials::{EmissionMode, ModelConfig, NeuralHmm, TransitionMode};
use nhmm::Error;
use sha2::{Digest, Sha256};

fn small_model(em: EmissionMode, tr: TransitionMode) -> NeuralHmm {
    let mut vocab = Vocab::new();
    parse_corpus(
        "The 1987 cat sat\nU.S. dogs ran far\n",
        CorpusFormat::Tokens,
        &mut vocab,
    )
    .unwrap();
    let mut c = ModelConfig::new(3, em, tr);
    c.hidden = 5;
    c.cnn_filters_per_width = 2;
    c.cnn_max_width = 3;
    c.char_embed_dim = 3;
    c.max_word_len = 5;
    c.lstm_layers = 2;
    c.dropout = 0.25;
    NeuralHmm::new(c, vocab, 99).unwrap()
}

#[test]
fn save_load_save_is_byte_identical() {
    for (em, tr) in [
        (EmissionMode::Lookup, TransitionMode::Static),
        (EmissionMode::CharCnn, TransitionMode::Lstm),
    ] {
        let m = small_model(em, tr);
        let bytes = write_model(&m).unwrap();
        assert!(bytes.starts_with(MAGIC.as_bytes()));
        let back = read_model(&bytes).unwrap();
        assert_eq!(write_model(&back).unwrap(), bytes);
        assert_eq!(back.config(), m.config());
        assert_eq!(back.vocab(), m.vocab());
        let bits = |t: Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(
            bits(back.emission_log_probs().unwrap()),
            bits(m.emission_log_probs().unwrap())
        );
        for ((_, a), (_, b)) in back.params().iter().zip(m.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(bits(a.tensor.clone()), bits(b.tensor.clone()));
        }
    }
}

#[test]
fn save_and_load_through_files() {
    let m = small_model(EmissionMode::Lookup, TransitionMode::Lstm);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nhmm");
    nhmm::data::save_model(&m, &path).unwrap();
    let back = nhmm::data::load_model(&path).unwrap();
    assert_eq!(back.params(), m.params());
    assert!(matches!(
        nhmm::data::load_model(&dir.path().join("missing")),
        Err(Error::Io(_))
    ));
}

#[test]
fn every_tampered_byte_is_detected() {
    let bytes = write_model(&small_model(EmissionMode::Lookup, TransitionMode::Static)).unwrap();
    let step = (bytes.len() / 97).max(1);
    for i in (MAGIC.len() + 1..bytes.len()).step_by(step) {
        let mut bad = bytes.clone();
        bad[i] ^= 0x10;
        assert!(
            matches!(read_model(&bad), Err(Error::Corruption(_))),
            "byte {i}"
        );
    }
    let mut cut = bytes.clone();
    cut.truncate(bytes.len() - 5);
    assert!(matches!(read_model(&cut), Err(Error::Corruption(_))));
    assert!(matches!(read_model(b"garbage"), Err(Error::Format(_))));
}

#[test]
fn other_format_versions_are_rejected() {
    let bytes = write_model(&small_model(EmissionMode::Lookup, TransitionMode::Static)).unwrap();
    let body = &bytes[..bytes.len() - 32];
    let from = format!("version={FORMAT_VERSION}\n");
    let to = format!("version={}\n", FORMAT_VERSION + 1);
    let pos = body
        .windows(from.len())
        .position(|w| w == from.as_bytes())
        .unwrap();
    let mut forged = body[..pos].to_vec();
    forged.extend_from_slice(to.as_bytes());
    forged.extend_from_slice(&body[pos + from.len()..]);
    let digest = Sha256::digest(&forged);
    forged.extend_from_slice(&digest);
    assert!(matches!(read_model(&forged), Err(Error::Format(_))));
}

fn monte_carlo_hmm() -> HmmParams {
    let trans = Tensor::from_rows(&[
        vec![0.5, 0.2, 0.2, 0.1],
        vec![0.1, 0.1, 0.7, 0.1],
        vec![0.3, 0.4, 0.2, 0.1],
        vec![0.6, 0.3, 0.1, 0.0],
    ])
    .unwrap();
    let emit = Tensor::from_rows(&[
        vec![0.7, 0.1, 0.1, 0.1, 0.0],
        vec![0.0, 0.25, 0.25, 0.25, 0.25],
        vec![0.05, 0.05, 0.1, 0.2, 0.6],
    ])
    .unwrap();
    HmmParams::new(trans, emit).unwrap()
}

#[test]
fn sampled_frequencies_match_the_generating_tables() {
    let hmm = monte_carlo_hmm();
    let samples = sample_sentences(&hmm, 11_000, 100_000, 5).unwrap();
    let tokens: usize = samples.iter().map(|s| s.words.len()).sum();
    assert!(tokens >= 100_000, "{tokens}");
    let (k, v) = (3, 5);
    let mut bigram = vec![vec![0.0; k + 1]; k + 1];
    let mut emit = vec![vec![0.0; v]; k];
    for s in &samples {
        let mut prev = k;
        for (&z, &w) in s.states.iter().zip(&s.words) {
            bigram[prev][z] += 1.0;
            emit[z][w] += 1.0;
            prev = z;
        }
        bigram[prev][k] += 1.0;
    }
    for (i, row) in bigram.iter().enumerate() {
        let n: f64 = row.iter().sum();
        for (j, c) in row.iter().enumerate() {
            assert!(
                (c / n - hmm.trans().at(i, j)).abs() <= 0.01,
                "trans {i}->{j}"
            );
        }
    }
    for (i, row) in emit.iter().enumerate() {
        let n: f64 = row.iter().sum();
        for (j, c) in row.iter().enumerate() {
            assert!((c / n - hmm.emit().at(i, j)).abs() <= 0.01, "emit {i}->{j}");
        }
    }
}

#[test]
fn synthetic_corpora_are_reproducible_and_tagged() {
    let hmm = monte_carlo_hmm();
    let (va, a) = generate_synthetic(&hmm, 200, 30, 8).unwrap();
    let (vb, b) = generate_synthetic(&hmm, 200, 30, 8).unwrap();
    assert_eq!((va, &a.fingerprint), (vb, &b.fingerprint));
    assert_eq!(a.sentences, b.sentences);
    let (_, c) = generate_synthetic(&hmm, 200, 30, 9).unwrap();
    assert_ne!(a.fingerprint, c.fingerprint);
    for s in &a.sentences {
        assert!(!s.is_empty() && s.len() <= 30);
        assert_eq!(s.tags.as_ref().unwrap().len(), s.len());
    }
    let samples = sample_sentences(&hmm, 200, 30, 8).unwrap();
    for (s, smp) in a.sentences.iter().zip(&samples) {
        let tags: Vec<usize> = s
            .tags
            .as_ref()
            .unwrap()
            .iter()
            .map(|&t| t as usize)
            .collect();
        assert_eq!(tags, smp.states);
    }
}

#[test]
fn degenerate_boundary_is_a_generation_error() {
    let trans = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
    let hmm = HmmParams::new(trans, Tensor::from_rows(&[vec![1.0]]).unwrap()).unwrap();
    assert!(matches!(
        sample_sentences(&hmm, 1, 5, 0),
        Err(Error::Generation(_))
    ));
}

#[test]
fn normalization_composes_with_reading() {
    let mut vocab = Vocab::new();
    let c = parse_corpus("1987\tCD\nU.S.\tNNP\n\n", CorpusFormat::Conll, &mut vocab).unwrap();
    assert_eq!(c.sentences.len(), 1);
    assert_eq!(vocab.word(c.sentences[0].words[0]), Some("0000"));
    assert_eq!(vocab.word(c.sentences[0].words[1]), Some("U.S."));
    assert_eq!(c.gold_tags().unwrap(), vec![vec![0, 1]]);
    for raw in ["3-year-old", "x9y", "", "ÄÖ12"] {
        let once = normalize_token(raw);
        assert_eq!(normalize_token(&once), once);
    }
    assert_eq!(normalize_token("3-year-old"), "0-year-old");
}
