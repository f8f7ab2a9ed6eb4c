//! Word-level vocabulary built from the training corpus.

use crate::corpus::DialoguePair;
use crate::error::{CmnError, Result};
use std::collections::HashMap;

/// Classification position prepended to every encoder input.
pub const CLS: &str = "<cls>";
/// Separator between context and response in the pair encoder.
pub const SEP: &str = "<sep>";
/// Decoder start-of-target marker.
pub const BOS: &str = "<bos>";
/// Fallback for tokens unseen at vocabulary-build time.
pub const UNK: &str = "<unk>";

const SPECIALS: [&str; 4] = [UNK, CLS, SEP, BOS];

/// Token ↔ id mapping with reserved special tokens. Unknown tokens map to
/// [`UNK`] rather than erroring.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from an iterator of corpus tokens: specials first, then tokens
    /// by descending frequency (ties alphabetical), capped at `max_size`.
    pub fn build<'a>(tokens: impl Iterator<Item = &'a str>, max_size: Option<usize>) -> Result<Self> {
        if let Some(cap) = max_size {
            if cap < SPECIALS.len() + 1 {
                return Err(CmnError::InvalidConfig(format!(
                    "vocabulary cap {cap} cannot hold {} special tokens plus content",
                    SPECIALS.len()
                )));
            }
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for token in tokens {
            *counts.entry(token).or_insert(0) += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

        let mut list: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let budget = max_size.map(|m| m - SPECIALS.len()).unwrap_or(usize::MAX);
        list.extend(ranked.into_iter().take(budget).map(|(t, _)| t.to_string()));
        Ok(Self::from_tokens(list))
    }

    /// Build from every context/reference/candidate in a corpus.
    pub fn from_pairs(pairs: &[DialoguePair], max_size: Option<usize>) -> Result<Self> {
        let mut all: Vec<String> = Vec::new();
        for pair in pairs {
            all.extend(pair.context_tokens());
            all.extend(pair.reference_tokens());
            if pair.candidate.is_some() {
                all.extend(pair.candidate_tokens()?);
            }
        }
        Self::build(all.iter().map(String::as_str), max_size)
    }

    /// Reassemble from a serialized token list (checkpoint loading).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a token, falling back to the unknown id.
    pub fn id(&self, token: &str) -> usize {
        self.index
            .get(token)
            .copied()
            .unwrap_or_else(|| self.index[UNK])
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}
