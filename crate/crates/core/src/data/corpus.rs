use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::vocab::{normalize_token, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One whitespace-tokenized sentence per line.
    Tokens,
    /// `word<TAB>tag` per line, blank line between sentences.
    Conll,
}

impl FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tokens" => Ok(Self::Tokens),
            "conll" => Ok(Self::Conll),
            _ => Err(Error::Usage(format!(
                "unknown corpus format `{s}` (tokens|conll)"
            ))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tokens => "tokens",
            Self::Conll => "conll",
        })
    }
}

/// Gold tag names in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TagSet {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl TagSet {
    pub fn id_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.ids.insert(name.to_string(), id);
        self.names.push(name.to_string());
        id
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub words: Vec<u32>,
    /// Character ids per token, kept even for `UNK` words.
    pub chars: Vec<Vec<u32>>,
    pub tags: Option<Vec<u32>>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub tagset: TagSet,
    pub source: Option<PathBuf>,
    /// SHA-256 over the normalized tokens, their ids and gold tags.
    pub fingerprint: String,
    /// Tokens mapped to `UNK` because the vocabulary was frozen.
    pub unk_tokens: usize,
}

impl Corpus {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn gold_tags(&self) -> Option<Vec<Vec<u32>>> {
        self.sentences.iter().map(|s| s.tags.clone()).collect()
    }
}

struct Builder<'a> {
    vocab: &'a mut Vocab,
    sentences: Vec<Sentence>,
    tagset: TagSet,
    hasher: Sha256,
    unk_tokens: usize,
}

impl<'a> Builder<'a> {
    fn new(vocab: &'a mut Vocab, format: CorpusFormat) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(format.to_string().as_bytes());
        Self {
            vocab,
            sentences: Vec::new(),
            tagset: TagSet::default(),
            hasher,
            unk_tokens: 0,
        }
    }

    fn push(&mut self, tokens: &[&str], tags: Option<&[&str]>) -> Result<()> {
        let mut words = Vec::with_capacity(tokens.len());
        let mut chars = Vec::with_capacity(tokens.len());
        for raw in tokens {
            let w = normalize_token(raw);
            let id = if self.vocab.is_frozen() {
                match self.vocab.word_id(&w) {
                    Some(id) => id,
                    None => {
                        self.unk_tokens += 1;
                        super::vocab::UNK
                    }
                }
            } else {
                self.vocab.add_word(&w)?
            };
            self.hasher.update(w.as_bytes());
            self.hasher.update(id.to_le_bytes());
            chars.push(self.vocab.char_ids(&w));
            words.push(id);
        }
        let tags = tags.map(|ts| {
            ts.iter()
                .map(|t| {
                    self.hasher.update(t.as_bytes());
                    self.hasher.update([0x1f]);
                    self.tagset.id_or_insert(t)
                })
                .collect()
        });
        self.hasher.update([0x1e]);
        self.sentences.push(Sentence { words, chars, tags });
        Ok(())
    }

    fn finish(self, source: Option<PathBuf>) -> Corpus {
        if self.unk_tokens > 0 {
            log::info!("{} tokens mapped to <unk>", self.unk_tokens);
        }
        Corpus {
            sentences: self.sentences,
            tagset: self.tagset,
            source,
            fingerprint: hex::encode(self.hasher.finalize()),
            unk_tokens: self.unk_tokens,
        }
    }
}

/// Parses corpus text. A non-frozen vocabulary grows; a frozen one maps
/// unseen words to `UNK`.
pub fn parse_corpus(text: &str, format: CorpusFormat, vocab: &mut Vocab) -> Result<Corpus> {
    let mut b = Builder::new(vocab, format);
    match format {
        CorpusFormat::Tokens => {
            let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
            let last = lines
                .iter()
                .rposition(|l| !l.trim().is_empty())
                .map_or(0, |i| i + 1);
            for (i, line) in lines[..last].iter().enumerate() {
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.is_empty() {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "empty sentence".into(),
                    });
                }
                b.push(&toks, None)?;
            }
        }
        CorpusFormat::Conll => {
            let mut words: Vec<&str> = Vec::new();
            let mut tags: Vec<&str> = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim_end_matches('\r');
                if line.trim().is_empty() {
                    if !words.is_empty() {
                        b.push(&words, Some(&tags))?;
                        words.clear();
                        tags.clear();
                    }
                    continue;
                }
                match line.split('\t').collect::<Vec<_>>()[..] {
                    [w, t] if !w.is_empty() && !t.is_empty() && !w.contains(' ') => {
                        words.push(w);
                        tags.push(t);
                    }
                    _ => {
                        return Err(Error::Parse {
                            line: i + 1,
                            msg: format!("expected `word<TAB>tag`, got `{line}`"),
                        })
                    }
                }
            }
            if !words.is_empty() {
                b.push(&words, Some(&tags))?;
            }
        }
    }
    Ok(b.finish(None))
}

pub fn read_corpus(path: &Path, format: CorpusFormat, vocab: &mut Vocab) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    let mut c = parse_corpus(&text, format, vocab)?;
    if c.sentences.is_empty() {
        return Err(Error::Data(format!(
            "{} contains no sentences",
            path.display()
        )));
    }
    c.source = Some(path.to_path_buf());
    Ok(c)
}

/// Writes `word<TAB>tag` lines; sentences without tags are rejected.
pub fn write_conll<W: Write>(out: &mut W, corpus: &Corpus, vocab: &Vocab) -> Result<()> {
    for (i, s) in corpus.sentences.iter().enumerate() {
        let tags = s
            .tags
            .as_ref()
            .ok_or_else(|| Error::Data(format!("sentence {i} has no tags")))?;
        for (&w, &t) in s.words.iter().zip(tags) {
            let word = vocab
                .word(w)
                .ok_or_else(|| Error::Vocab(format!("unknown word id {w}")))?;
            let tag = corpus
                .tagset
                .name(t)
                .ok_or_else(|| Error::Data(format!("unknown tag id {t}")))?;
            writeln!(out, "{word}\t{tag}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_tokens<W: Write>(out: &mut W, corpus: &Corpus, vocab: &Vocab) -> Result<()> {
    for s in &corpus.sentences {
        let words: Result<Vec<&str>> = s
            .words
            .iter()
            .map(|&w| {
                vocab
                    .word(w)
                    .ok_or_else(|| Error::Vocab(format!("unknown word id {w}")))
            })
            .collect();
        writeln!(out, "{}", words?.join(" "))?;
    }
    Ok(())
}

/// Reads whitespace-separated integer sequences, one sentence per line.
pub fn parse_id_lines(text: &str) -> Result<Vec<Vec<u32>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|t| {
                    t.parse::<u32>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("`{t}` is not a cluster id"),
                    })
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conll_sentence_with_trailing_blank() {
        let mut v = Vocab::new();
        let c = parse_corpus("The\tDT\n1987\tCD\n\n\n", CorpusFormat::Conll, &mut v).unwrap();
        assert_eq!(c.sentences.len(), 1);
        let s = &c.sentences[0];
        assert_eq!(s.len(), 2);
        assert_eq!(s.tags.as_deref(), Some(&[0, 1][..]));
        assert_eq!(v.word(s.words[1]), Some("0000"));
    }

    #[test]
    fn conll_malformed_line_reports_number() {
        let mut v = Vocab::new();
        let r = parse_corpus("a\tX\n\nb X\n", CorpusFormat::Conll, &mut v);
        assert!(matches!(r, Err(Error::Parse { line: 3, .. })));
        let r = parse_corpus("a\tX\tY\n", CorpusFormat::Conll, &mut Vocab::new());
        assert!(matches!(r, Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn tokens_format_and_frozen_unk() {
        let mut v = Vocab::new();
        let c = parse_corpus("a b a\nc\n\n", CorpusFormat::Tokens, &mut v).unwrap();
        assert_eq!(c.sentences.len(), 2);
        assert_eq!(c.sentences[0].words, vec![3, 4, 3]);
        v.freeze();
        let d = parse_corpus("a zz\n", CorpusFormat::Tokens, &mut v).unwrap();
        assert_eq!(d.sentences[0].words, vec![3, 0]);
        assert_eq!(d.unk_tokens, 1);
        assert_eq!(d.sentences[0].chars[1], vec![0, 0]);
        assert!(matches!(
            parse_corpus("a\n\nb\n", CorpusFormat::Tokens, &mut v),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn fingerprint_is_deterministic() {
        let text = "x\tA\ny\tB\n\nx\tB\n";
        let mut v1 = Vocab::new();
        let mut v2 = Vocab::new();
        let a = parse_corpus(text, CorpusFormat::Conll, &mut v1).unwrap();
        let b = parse_corpus(text, CorpusFormat::Conll, &mut v2).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint);
        let c = parse_corpus(
            "x\tA\ny\tA\n\nx\tB\n",
            CorpusFormat::Conll,
            &mut Vocab::new(),
        )
        .unwrap();
        assert_ne!(a.fingerprint, c.fingerprint);
    }

    #[test]
    fn conll_writer_round_trips() {
        let mut v = Vocab::new();
        let text = "de\tP\n00\tNUM\n\nx\tN\n\n";
        let c = parse_corpus(text, CorpusFormat::Conll, &mut v).unwrap();
        let mut out = Vec::new();
        write_conll(&mut out, &c, &v).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn id_lines() {
        assert_eq!(
            parse_id_lines("0 1\n\n2\n").unwrap(),
            vec![vec![0, 1], vec![2]]
        );
        assert!(matches!(
            parse_id_lines("0 x\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
