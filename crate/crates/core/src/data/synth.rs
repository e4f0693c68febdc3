use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::{parse_corpus, Corpus, CorpusFormat};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::hmm::HmmParams;

/// One sampled sentence: word indices `0..V` and the states that emitted them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub words: Vec<usize>,
    pub states: Vec<usize>,
}

/// Ancestral sampling from the boundary-augmented HMM. The first move out of
/// the boundary is conditioned on a real tag; sampling stops when the boundary
/// is re-entered or after `max_len` tokens.
pub fn sample_sentences(
    hmm: &HmmParams,
    num_sentences: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    let (k, v) = (hmm.num_tags(), hmm.vocab_size());
    let trans = hmm.trans();
    let emit = hmm.emit();
    let start = WeightedIndex::new(&trans.row(k)[..k])
        .map_err(|_| Error::Generation("boundary never moves to a real tag".into()))?;
    let rows: Vec<WeightedIndex<f64>> = (0..k)
        .map(|i| {
            WeightedIndex::new(trans.row(i))
                .map_err(|e| Error::Generation(format!("transition row {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    let emits: Vec<WeightedIndex<f64>> = (0..k)
        .map(|i| {
            WeightedIndex::new(emit.row(i))
                .map_err(|e| Error::Generation(format!("emission row {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    debug_assert_eq!(emit.dims2().1, v);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_sentences);
    for _ in 0..num_sentences {
        let mut s = Sample {
            words: Vec::new(),
            states: Vec::new(),
        };
        let mut z = start.sample(&mut rng);
        loop {
            s.states.push(z);
            s.words.push(emits[z].sample(&mut rng));
            if s.words.len() == max_len {
                break;
            }
            let next = rows[z].sample(&mut rng);
            if next == k {
                break;
            }
            z = next;
        }
        out.push(s);
    }
    Ok(out)
}

/// Digit-free form of word index `v`: `w` followed by `v` in base 26 over `a..z`.
pub fn synthetic_word(v: usize) -> String {
    let mut digits = Vec::new();
    let mut x = v;
    loop {
        digits.push(b'a' + (x % 26) as u8);
        x /= 26;
        if x == 0 {
            break;
        }
    }
    digits.reverse();
    format!("w{}", String::from_utf8(digits).expect("ascii"))
}

/// Synthetic tagged corpus with words named by [`synthetic_word`] and tags
/// `t{state}`. Word index `v` receives emission column `v` and tag id = state.
pub fn generate_synthetic(
    hmm: &HmmParams,
    num_sentences: usize,
    max_len: usize,
    seed: u64,
) -> Result<(Vocab, Corpus)> {
    let names: Vec<String> = (0..hmm.vocab_size()).map(synthetic_word).collect();
    generate_synthetic_named(hmm, &names, num_sentences, max_len, seed)
}

/// As [`generate_synthetic`] with caller-chosen word forms, which must be
/// distinct, whitespace-free and unchanged by digit normalization.
pub fn generate_synthetic_named(
    hmm: &HmmParams,
    names: &[String],
    num_sentences: usize,
    max_len: usize,
    seed: u64,
) -> Result<(Vocab, Corpus)> {
    if names.len() != hmm.vocab_size() {
        return Err(Error::Config(format!(
            "{} word forms for a vocabulary of {}",
            names.len(),
            hmm.vocab_size()
        )));
    }
    let mut vocab = Vocab::new();
    for n in names {
        if n.is_empty() || n.chars().any(char::is_whitespace) || *n != super::normalize_token(n) {
            return Err(Error::Config(format!("invalid word form `{n}`")));
        }
        vocab.add_word(n)?;
    }
    if vocab.num_types() != names.len() {
        return Err(Error::Config("word forms must be distinct".into()));
    }
    vocab.freeze();
    let samples = sample_sentences(hmm, num_sentences, max_len, seed)?;
    let mut text = String::new();
    for s in &samples {
        for (&w, &z) in s.words.iter().zip(&s.states) {
            text.push_str(&names[w]);
            text.push('\t');
            text.push_str(&format!("t{z}"));
            text.push('\n');
        }
        text.push('\n');
    }
    let mut corpus = parse_corpus(&text, CorpusFormat::Conll, &mut vocab)?;
    // tag ids follow state ids, not first-seen order
    let k = hmm.num_tags();
    let mut tagset = super::TagSet::default();
    for z in 0..k {
        tagset.id_or_insert(&format!("t{z}"));
    }
    for (sent, s) in corpus.sentences.iter_mut().zip(&samples) {
        sent.tags = Some(s.states.iter().map(|&z| z as u32).collect());
    }
    corpus.tagset = tagset;
    Ok((vocab, corpus))
}
