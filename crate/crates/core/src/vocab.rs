//! Word-level tokenizer and corpus-built vocabulary.
//!
//! Text is lowercased and split on whitespace, with punctuation kept as
//! single-character tokens (so `alice.chen@mailbox.com` yields seven
//! tokens). Specials occupy fixed low ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Splits text into lowercase word and punctuation tokens.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabWire {
    format_version: u32,
    tokens: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from corpus texts: tokens are counted, the most
    /// frequent `max_size - 5` kept (ties broken lexicographically), then
    /// sorted so ids are independent of input order.
    pub fn build<'a>(texts: impl Iterator<Item = &'a str>, max_size: usize) -> Self {
        let mut freq: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for tok in split_tokens(text) {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
        let mut counted: Vec<(String, u64)> = freq.into_iter().collect();
        counted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep = max_size.saturating_sub(SPECIALS.len()).max(1);
        counted.truncate(keep);
        let mut tokens: Vec<String> = counted.into_iter().map(|(t, _)| t).collect();
        tokens.sort();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            id_to_token,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// `[CLS] tokens... [SEP]`, truncated so the result never exceeds
    /// `max_tokens` ids.
    pub fn tokenize(&self, text: &str, max_tokens: usize) -> Vec<usize> {
        let mut ids = Vec::with_capacity(max_tokens.min(34));
        ids.push(CLS);
        for tok in split_tokens(text).into_iter().take(max_tokens.saturating_sub(2)) {
            ids.push(self.id(&tok));
        }
        ids.push(SEP);
        ids
    }

    pub fn to_json(&self) -> Vec<u8> {
        let wire = VocabWire {
            format_version: 1,
            tokens: self.id_to_token[SPECIALS.len()..].to_vec(),
        };
        serde_json::to_vec(&wire).expect("vocab serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let wire: VocabWire = serde_json::from_slice(bytes)?;
        if wire.format_version != 1 {
            return Err(Error::Config(format!(
                "unsupported vocab format version {}",
                wire.format_version
            )));
        }
        Ok(Self::from_tokens(wire.tokens))
    }

    /// Hash of the canonical JSON encoding, recorded in checkpoints.
    pub fn sha256_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_vocab() -> Vocab {
        Vocab::build(
            ["JAVA develop engineer", "develop java services"].into_iter(),
            100,
        )
    }

    #[test]
    fn empty_text_is_cls_sep() {
        let v = small_vocab();
        assert_eq!(v.tokenize("", 32), vec![CLS, SEP]);
    }

    #[test]
    fn three_words_make_five_ids() {
        let v = small_vocab();
        let ids = v.tokenize("JAVA develop engineer", 32);
        assert_eq!(ids.len(), 5);
        assert_eq!(ids[0], CLS);
        assert_eq!(*ids.last().unwrap(), SEP);
        assert!(ids[1..4].iter().all(|&id| id >= SPECIALS.len()));
    }

    #[test]
    fn long_text_truncates_to_cap() {
        let v = small_vocab();
        let text = vec!["java"; 40].join(" ");
        let ids = v.tokenize(&text, 32);
        assert_eq!(ids.len(), 32);
        assert_eq!(*ids.last().unwrap(), SEP);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = small_vocab();
        let ids = v.tokenize("zzzzz", 32);
        assert_eq!(ids, vec![CLS, UNK, SEP]);
    }

    #[test]
    fn punctuation_splits_as_tokens() {
        let toks = split_tokens("alice.chen@mailbox.com");
        assert_eq!(toks, vec!["alice", ".", "chen", "@", "mailbox", ".", "com"]);
    }

    #[test]
    fn build_is_input_order_independent() {
        let a = Vocab::build(["alpha beta", "gamma"].into_iter(), 100);
        let b = Vocab::build(["gamma", "alpha beta"].into_iter(), 100);
        assert_eq!(a, b);
        assert_eq!(a.sha256_hex(), b.sha256_hex());
    }

    #[test]
    fn json_round_trip_preserves_ids() {
        let v = small_vocab();
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn specials_have_fixed_low_ids() {
        let v = small_vocab();
        assert_eq!(v.token(PAD), "[PAD]");
        assert_eq!(v.token(UNK), "[UNK]");
        assert_eq!(v.token(CLS), "[CLS]");
        assert_eq!(v.token(SEP), "[SEP]");
        assert_eq!(v.token(MASK), "[MASK]");
    }
}
