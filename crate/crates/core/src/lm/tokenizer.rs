//! Character-level tokenizer with lowercase + whitespace-collapse normalization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::LmError;

/// Lowercases, collapses runs of whitespace into one space and trims.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub const EOS: usize = 0;
pub const SEP: usize = 1;
pub const UNK: usize = 2;
const SPECIALS: usize = 3;

pub const UNK_GLYPH: char = '\u{FFFD}';
const DEFAULT_ALPHABET: &str = " abcdefghijklmnopqrstuvwxyz0123456789.,?!'-:;()";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Tokenizer {
    alphabet: Vec<char>,
    index: HashMap<char, usize>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::from_alphabet(DEFAULT_ALPHABET).expect("default alphabet is valid")
    }
}

impl From<Tokenizer> for String {
    fn from(t: Tokenizer) -> String {
        t.alphabet.iter().collect()
    }
}

impl TryFrom<String> for Tokenizer {
    type Error = LmError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::from_alphabet(&s)
    }
}

impl Tokenizer {
    pub fn from_alphabet(alphabet: &str) -> Result<Self, LmError> {
        let chars: Vec<char> = alphabet.chars().collect();
        let mut index = HashMap::new();
        for (i, &c) in chars.iter().enumerate() {
            if c.is_uppercase() || c == UNK_GLYPH || (c.is_whitespace() && c != ' ') {
                return Err(LmError::Config(format!("invalid alphabet character {c:?}")));
            }
            if index.insert(c, SPECIALS + i).is_some() {
                return Err(LmError::Config(format!(
                    "duplicate alphabet character {c:?}"
                )));
            }
        }
        Ok(Self {
            alphabet: chars,
            index,
        })
    }

    pub fn vocab_size(&self) -> usize {
        SPECIALS + self.alphabet.len()
    }

    /// Normalizes then maps each character to its id; characters outside the
    /// alphabet map to [`UNK`].
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, LmError> {
        let norm = normalize(text);
        if norm.is_empty() {
            return Err(LmError::Contract("cannot tokenize empty text".into()));
        }
        Ok(norm
            .chars()
            .map(|c| self.index.get(&c).copied().unwrap_or(UNK))
            .collect())
    }

    /// Inverse of [`Tokenizer::encode`] up to normalization. `EOS` and `SEP`
    /// render as `<eos>` / `<sep>`; `UNK` renders as U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> Result<String, LmError> {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            match id {
                EOS => out.push_str("<eos>"),
                SEP => out.push_str("<sep>"),
                UNK => out.push(UNK_GLYPH),
                _ => {
                    let c = self.alphabet.get(id - SPECIALS).ok_or_else(|| {
                        LmError::Decode(format!(
                            "token id {id} outside vocabulary of {}",
                            self.vocab_size()
                        ))
                    })?;
                    out.push(*c);
                }
            }
        }
        Ok(out)
    }

    /// Prompt layout used throughout: the question's characters followed by
    /// the separator token, whose position is the "last token" of the prompt.
    pub fn encode_prompt(&self, question: &str) -> Result<Vec<usize>, LmError> {
        let mut ids = self.encode(question)?;
        ids.push(SEP);
        Ok(ids)
    }

    /// Answer characters followed by end-of-sequence.
    pub fn encode_answer(&self, answer: &str) -> Result<Vec<usize>, LmError> {
        let mut ids = self.encode(answer)?;
        ids.push(EOS);
        Ok(ids)
    }
}
