//! Word-level vocabulary with a fixed block of reserved ids.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const MASK: u32 = 3;
pub const UNK: u32 = 4;
pub const BOS: u32 = 5;
pub const EOS: u32 = 6;

pub const RESERVED: [&str; 7] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]", "[BOS]", "[EOS]"];

pub fn is_special(id: u32) -> bool {
    (id as usize) < RESERVED.len()
}

/// Lowercases and splits on whitespace; every other non-alphanumeric
/// character becomes its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Normalized form of `text`: its tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    split_words(text).join(" ")
}

/// Token ids of one sequence. Entries past `valid_len` are padding.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextTokens {
    pub ids: Vec<u32>,
    pub valid_len: usize,
}

impl TextTokens {
    pub fn new(ids: Vec<u32>) -> Self {
        let valid_len = ids.len();
        TextTokens { ids, valid_len }
    }

    pub fn valid(&self) -> &[u32] {
        &self.ids[..self.valid_len]
    }

    pub fn len(&self) -> usize {
        self.valid_len
    }

    pub fn is_empty(&self) -> bool {
        self.valid_len == 0
    }

    /// Right-pads every sequence with [PAD] to the longest valid length.
    pub fn pad_batch(batch: &[TextTokens]) -> Vec<TextTokens> {
        let longest = batch.iter().map(|t| t.valid_len).max().unwrap_or(0);
        batch
            .iter()
            .map(|t| {
                let mut ids = t.valid().to_vec();
                ids.resize(longest, PAD);
                TextTokens {
                    ids,
                    valid_len: t.valid_len,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new()).expect("empty vocabulary is valid")
    }
}

impl Vocabulary {
    /// Reserved block followed by the given tokens in order.
    pub fn from_tokens<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for w in words {
            let w = w.into();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary entry {w:?}")));
            }
            if index.contains_key(&w) {
                return Err(Error::Config(format!("duplicate vocabulary entry {w:?}")));
            }
            index.insert(w.clone(), tokens.len() as u32);
            tokens.push(w);
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Sorted set of every word appearing in `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(split_words).collect();
        Self::from_tokens(words).expect("split words are valid entries")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::InvalidToken {
                id,
                vocab_size: self.tokens.len(),
            })
    }

    /// Entries after the reserved block, in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// No specials are added; unknown words map to [UNK].
    pub fn tokenize(&self, text: &str) -> TextTokens {
        TextTokens::new(
            split_words(text)
                .iter()
                .map(|w| self.id(w).unwrap_or(UNK))
                .collect(),
        )
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let words = ids.iter().map(|&id| self.token(id)).collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    /// One token per line, line `k` holding id `RESERVED.len() + k`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.words().join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()).map(str::to_string))
    }
}
