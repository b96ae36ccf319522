//! Whitespace vocabulary with reserved PAD/UNK ids.

use std::collections::HashMap;

use super::Corpus;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Token-to-id mapping. Ids 0 and 1 are reserved for PAD and UNK; real
/// tokens start at 2, ordered by (frequency desc, token asc) so the mapping
/// is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Count whitespace tokens over the training split and keep those with
/// frequency >= `min_freq`.
pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Result<Vocab> {
    if corpus.docs.is_empty() {
        return Err(Error::NoDocuments);
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for doc in corpus.train_docs() {
        for tok in doc.text.split_whitespace() {
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(_, c)| c >= min_freq)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Vocab::from_tokens(tokens)
}

impl Vocab {
    /// Rebuild from an id-ordered token list (checkpoint loading).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>" {
            return Err(Error::invalid(
                "vocab",
                "token list must start with <pad>, <unk>",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid("vocab", format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Whitespace-tokenize and map to ids, truncating to `max_len`.
    /// Empty texts map to a single UNK so no document is token-free.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let ids: Vec<u32> = text
            .split_whitespace()
            .take(max_len)
            .map(|t| self.id_of(t))
            .collect();
        if ids.is_empty() {
            vec![UNK_ID]
        } else {
            ids
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Document, Split};

    fn corpus_of(text: &str) -> Corpus {
        Corpus {
            docs: vec![Document {
                text: text.to_string(),
                coarse: 0,
                fine: None,
                split: Split::Train,
            }],
            coarse_names: vec!["only".into()],
            fine_names: vec![],
            fine_parent: vec![],
        }
    }

    #[test]
    fn frequency_then_lexicographic_ordering() {
        // "a a b": a (freq 2) gets id 2, b (freq 1) id 3.
        let v = build_vocab(&corpus_of("a a b"), 1).unwrap();
        assert_eq!(v.id_of("a"), 2);
        assert_eq!(v.id_of("b"), 3);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn pad_is_always_id_zero() {
        let v = build_vocab(&corpus_of("x y z"), 1).unwrap();
        assert_eq!(v.id_of("<pad>"), PAD_ID);
        assert_eq!(v.id_of("<unk>"), UNK_ID);
        assert_eq!(PAD_ID, 0);
    }

    #[test]
    fn all_below_min_freq_leaves_only_reserved() {
        let v = build_vocab(&corpus_of("a b c"), 2).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.id_of("a"), UNK_ID);
    }

    #[test]
    fn encode_truncates_and_maps_unknowns() {
        let v = build_vocab(&corpus_of("a a b"), 1).unwrap();
        assert_eq!(v.encode("a b zzz", 10), vec![2, 3, UNK_ID]);
        assert_eq!(v.encode("a a a a", 2), vec![2, 2]);
        assert_eq!(v.encode("", 5), vec![UNK_ID]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocab(&corpus_of("pear apple"), 1).unwrap();
        assert_eq!(v.id_of("apple"), 2);
        assert_eq!(v.id_of("pear"), 3);
    }
}
