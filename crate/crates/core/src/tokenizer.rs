//! Whitespace vocabulary and fixed-length encoding with a padding mask.
//!
//! Vocabulary file format: line 1 is `[PAD]`, line 2 is `[UNK]`, then one
//! token per line in id order (token on data line `n`, counted from 0, has
//! id `n + 2`).

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        id_to_token.extend(tokens);
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!(
                    "vocabulary token {t:?} is empty or contains whitespace"
                )));
            }
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            id_to_token,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token[2..]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(PAD_TOKEN) || lines.next() != Some(UNK_TOKEN) {
            return Err(Error::invalid("vocabulary file must start with [PAD] and [UNK] lines"));
        }
        Self::from_tokens(lines.map(str::to_string))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Builds a vocabulary from (already normalized) texts.
///
/// Tokens with frequency `>= min_freq` are ranked by descending frequency,
/// ties by ascending token string, and the list is cut so the vocabulary
/// (PAD and UNK included) has at most `max_size` entries.
pub fn build_vocab<'a, I>(texts: I, min_freq: usize, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if max_size < 3 {
        return Err(Error::invalid(format!("max_size must be >= 3, got {max_size}")));
    }
    if min_freq == 0 {
        return Err(Error::invalid("min_freq must be >= 1"));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for text in texts {
        for tok in text.split_whitespace() {
            if tok != PAD_TOKEN && tok != UNK_TOKEN {
                *freq.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().filter(|&(_, n)| n >= min_freq).collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - 2);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
}

/// Token ids of one text, right-padded with [`PAD`] to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedText {
    pub ids: Vec<u32>,
    /// `mask[i]` is true iff `ids[i] != PAD`; real tokens form a prefix.
    pub mask: Vec<bool>,
}

impl EncodedText {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub input: EncodedText,
    pub label: usize,
}

pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> EncodedText {
    let mut ids: Vec<u32> = text.split_whitespace().take(max_len).map(|t| vocab.id(t)).collect();
    let mask = (0..max_len).map(|i| i < ids.len()).collect();
    ids.resize(max_len, PAD);
    EncodedText { ids, mask }
}

/// Tokens of the unpadded prefix (UNK positions render as `[UNK]`).
pub fn decode(encoded: &EncodedText, vocab: &Vocabulary) -> Vec<String> {
    encoded
        .ids
        .iter()
        .zip(&encoded.mask)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| vocab.token(id).unwrap_or(UNK_TOKEN).to_string())
        .collect()
}
