//! Word-level vocabulary and tokenizer.

use std::collections::HashMap;
use std::ops::Deref;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
const SPECIALS: [&str; 3] = ["<pad>", "<unk>", "<bos>"];

/// Ordered list of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(pub Vec<usize>);

impl Deref for TokenSeq {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for TokenSeq {
    fn from(v: Vec<usize>) -> Self {
        TokenSeq(v)
    }
}

/// Lowercases and splits on whitespace; every non-alphanumeric,
/// non-whitespace character becomes its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Frequency-sorted vocabulary over a corpus; ties broken lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for w in split_words(line.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Empty("corpus has no tokens".into()));
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    /// Rebuilds a vocabulary from its id-ordered token list (checkpoint path).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        TokenSeq(
            split_words(text)
                .iter()
                .map(|w| self.id(w).unwrap_or(UNK))
                .collect(),
        )
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_order_with_specials_first() {
        let v = Vocab::build(&["a b a"]).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "<bos>", "a", "b"]);
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = Vocab::build(&["zeta alpha mid"]).unwrap();
        assert_eq!(&v.tokens()[3..], &["alpha", "mid", "zeta"]);
    }

    #[test]
    fn unseen_word_maps_to_unk() {
        let v = Vocab::build(&["a b"]).unwrap();
        assert_eq!(v.tokenize("a zebra").0, vec![v.id("a").unwrap(), UNK]);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(Vocab::build(&["", "  "]).is_err());
        let none: [&str; 0] = [];
        assert!(Vocab::build(&none).is_err());
    }

    #[test]
    fn splitting_lowercases_and_separates_punctuation() {
        assert_eq!(split_words("Mother's Day!"), vec!["mother", "'", "s", "day", "!"]);
        assert_eq!(split_words("baby product").len(), 2);
        assert!(split_words("").is_empty());
    }

    #[test]
    fn rebuild_is_deterministic() {
        let corpus = ["the cat sat", "on the mat", "the end ."];
        assert_eq!(Vocab::build(&corpus).unwrap(), Vocab::build(&corpus).unwrap());
    }

    proptest! {
        #[test]
        fn tokenize_inverts_detokenize(ids in proptest::collection::vec(3usize..12, 0..20)) {
            let v = Vocab::build(&["alpha beta gamma delta , . ? epsilon zeta eta theta"]).unwrap();
            let text = v.detokenize(&ids);
            prop_assert_eq!(v.tokenize(&text).0, ids);
        }
    }
}
