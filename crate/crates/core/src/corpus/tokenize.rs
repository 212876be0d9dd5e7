use serde::{Deserialize, Serialize};

use crate::rng::fnv1a64;

pub const DEFAULT_VOCAB_SIZE: usize = 32_768;
pub const DEFAULT_MAX_TOKENS: usize = 256;

/// Lowercasing word/punctuation tokenizer with feature hashing.
///
/// A token is either a maximal run of alphanumeric characters or a single
/// character that is neither alphanumeric nor whitespace. Each token maps to
/// `fnv1a64(utf8 bytes) % vocab_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub vocab_size: usize,
    pub max_tokens: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl Tokenizer {
    pub fn new(vocab_size: usize, max_tokens: usize) -> Self {
        assert!(vocab_size > 0, "vocab_size must be positive");
        Self { vocab_size, max_tokens }
    }

    pub fn token_id(&self, token: &str) -> u32 {
        (fnv1a64(token.as_bytes()) % self.vocab_size as u64) as u32
    }

    /// Token ids for `text`, truncated to `max_tokens`.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for_each_token(text, |tok| {
            if ids.len() == self.max_tokens {
                return false;
            }
            ids.push(self.token_id(tok));
            true
        });
        ids
    }
}

/// Walks the lowercased tokens of `text`; `visit` returns `false` to stop.
pub fn for_each_token(text: &str, mut visit: impl FnMut(&str) -> bool) {
    let lower = text.to_lowercase();
    let mut start: Option<usize> = None;
    for (i, c) in lower.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            if !visit(&lower[s..i]) {
                return;
            }
        }
        if !c.is_whitespace() && !visit(&lower[i..i + c.len_utf8()]) {
            return;
        }
    }
    if let Some(s) = start {
        visit(&lower[s..]);
    }
}
