use std::collections::HashMap;

use crate::error::{Error, Result};

/// Unknown word (word map) and unknown character (char map).
pub const UNK: u32 = 0;
/// Character padding; also the word-level padding id in LSTM batches.
pub const PAD: u32 = 1;
/// Start-of-sentence symbol consumed by the LSTM before position 1.
pub const SOS: u32 = 2;
/// First id assigned to a real word or character.
pub const FIRST_REAL: u32 = 3;

const RESERVED: [&str; 3] = ["<unk>", "<pad>", "<s>"];

/// Maps every decimal digit to `0`. No case folding.
pub fn normalize_token(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_ascii_digit() { '0' } else { c })
        .collect()
}

/// Word and character maps with reserved ids `UNK`, `PAD`, `SOS` in both.
///
/// Emission columns cover real word types only: word id `w ≥ FIRST_REAL`
/// owns column `w − FIRST_REAL`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    id2word: Vec<String>,
    word2id: HashMap<String, u32>,
    id2char: Vec<String>,
    char2id: HashMap<char, u32>,
    frozen: bool,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let reserved: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let word2id = reserved
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self {
            id2word: reserved.clone(),
            word2id,
            id2char: reserved,
            char2id: HashMap::new(),
            frozen: false,
        }
    }

    /// Rebuilds a vocabulary from id-ordered lists (reserved entries included).
    pub fn from_lists(words: Vec<String>, chars: Vec<String>) -> Result<Self> {
        if words.len() < RESERVED.len() || chars.len() < RESERVED.len() {
            return Err(Error::Vocab(
                "vocabulary lists lack reserved entries".into(),
            ));
        }
        let mut v = Self::new();
        for w in &words[RESERVED.len()..] {
            if v.word2id.contains_key(w) {
                return Err(Error::Vocab(format!("duplicate word `{w}`")));
            }
            v.word2id.insert(w.clone(), v.id2word.len() as u32);
            v.id2word.push(w.clone());
        }
        for c in &chars[RESERVED.len()..] {
            let mut it = c.chars();
            let ch = match (it.next(), it.next()) {
                (Some(ch), None) => ch,
                _ => {
                    return Err(Error::Vocab(format!(
                        "character entry `{c}` is not one character"
                    )))
                }
            };
            if v.char2id.insert(ch, v.id2char.len() as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate character `{c}`")));
            }
            v.id2char.push(c.clone());
        }
        v.frozen = true;
        Ok(v)
    }

    /// Id of a normalized word, registering it (and its characters) if new.
    pub fn add_word(&mut self, word: &str) -> Result<u32> {
        if let Some(&id) = self.word2id.get(word) {
            return Ok(id);
        }
        if self.frozen {
            return Err(Error::Vocab(format!(
                "frozen vocabulary cannot add `{word}`"
            )));
        }
        for ch in word.chars() {
            if !self.char2id.contains_key(&ch) {
                self.char2id.insert(ch, self.id2char.len() as u32);
                self.id2char.push(ch.to_string());
            }
        }
        let id = self.id2word.len() as u32;
        self.word2id.insert(word.to_string(), id);
        self.id2word.push(word.to_string());
        Ok(id)
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.word2id.get(word).copied()
    }

    pub fn word_or_unk(&self, word: &str) -> u32 {
        self.word_id(word).unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.id2word.get(id as usize).map(String::as_str)
    }

    /// Character ids of a word; unseen characters map to `UNK`.
    pub fn char_ids(&self, word: &str) -> Vec<u32> {
        word.chars()
            .map(|c| self.char2id.get(&c).copied().unwrap_or(UNK))
            .collect()
    }

    /// Total word ids, reserved included.
    pub fn num_words(&self) -> usize {
        self.id2word.len()
    }

    /// Real word types, i.e. emission columns.
    pub fn num_types(&self) -> usize {
        self.id2word.len() - FIRST_REAL as usize
    }

    pub fn num_chars(&self) -> usize {
        self.id2char.len()
    }

    /// Emission column of a word id, `None` for reserved ids.
    pub fn column(&self, id: u32) -> Option<usize> {
        (id >= FIRST_REAL && (id as usize) < self.id2word.len()).then(|| (id - FIRST_REAL) as usize)
    }

    /// Character ids of every real type, in column order.
    pub fn type_chars(&self) -> Vec<Vec<u32>> {
        self.id2word[FIRST_REAL as usize..]
            .iter()
            .map(|w| self.char_ids(w))
            .collect()
    }

    pub fn words(&self) -> &[String] {
        &self.id2word
    }

    pub fn chars(&self) -> &[String] {
        &self.id2char
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
}
