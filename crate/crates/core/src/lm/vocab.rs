//! Word-level vocabulary with fixed reserved ids.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Bijective token ↔ id table. Tokens are lowercase words; punctuation
/// characters are their own tokens.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from an iterator of words; reserved ids occupy 0..=3 and the
    /// remaining tokens are sorted for determinism.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut uniq: Vec<String> = words
            .into_iter()
            .flat_map(split_tokens)
            .filter(|w| !RESERVED.contains(&w.as_str()))
            .collect();
        uniq.sort();
        uniq.dedup();
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(uniq);
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Lowercase word-level tokenization; out-of-vocabulary words map to UNK.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_tokens(text)
            .into_iter()
            .map(|w| self.id(&w).unwrap_or(UNK))
            .collect()
    }

    /// Inverse of `tokenize` for in-vocabulary text; skips PAD/BOS/EOS.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id != PAD && id != BOS && id != EOS)
            .map(|&id| self.token(id))
            .collect();
        words.join(" ")
    }

    /// Write as UTF-8 lines "token<TAB>id".
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{t}\t{i}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Integrity(format!("bad vocab line: {line}")))?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Integrity(format!("bad vocab id: {line}")))?;
            pairs.push((tok.to_string(), id));
        }
        pairs.sort_by_key(|(_, id)| *id);
        for (i, (_, id)) in pairs.iter().enumerate() {
            if *id as usize != i {
                return Err(Error::Integrity("vocab ids are not dense".into()));
            }
        }
        let tokens: Vec<String> = pairs.into_iter().map(|(t, _)| t).collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary { tokens, ids })
    }
}

/// Lowercase and split into word/punctuation tokens.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if matches!(ch, '.' | ',' | '?' | '!' | ':' | ';') {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::build(["a picture of"]);
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<bos>"), Some(BOS));
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert_eq!(v.id("<unk>"), Some(UNK));
    }

    #[test]
    fn round_trip_for_in_vocab_text() {
        let v = Vocabulary::build(["a picture of a dog"]);
        let ids = v.tokenize("a picture of");
        assert_eq!(ids.len(), 3);
        assert_eq!(v.detokenize(&ids), "a picture of");
    }

    #[test]
    fn oov_maps_to_unk_and_empty_is_empty() {
        let v = Vocabulary::build(["a picture of"]);
        assert_eq!(v.tokenize("zebra"), vec![UNK]);
        assert!(v.tokenize("").is_empty());
    }

    #[test]
    fn punctuation_splits() {
        let v = Vocabulary::build(["the dog . q : ?"]);
        let ids = v.tokenize("The dog. Q: what?");
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(toks, vec!["the", "dog", ".", "q", ":", "<unk>", "?"]);
    }
}
