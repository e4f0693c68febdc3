//! Corpus ingestion, vocabulary, model files and synthetic corpora.

mod corpus;
mod model_file;
mod synth;
mod vocab;

pub use corpus::{
    parse_corpus, parse_id_lines, read_corpus, write_conll, write_tokens, Corpus, CorpusFormat,
    Sentence, TagSet,
};
pub use model_file::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use synth::{
    generate_synthetic, generate_synthetic_named, sample_sentences, synthetic_word, Sample,
};
pub use vocab::{normalize_token, Vocab, FIRST_REAL, PAD, SOS, UNK};
