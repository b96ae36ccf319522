//! Tokenization and deterministic batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Split, Vocab, PAD_ID};
use crate::error::{Error, Result};
use crate::rng::mix_seeds;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDoc {
    pub ids: Vec<u32>,
    pub coarse: usize,
    pub fine: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedCorpus {
    pub docs: Vec<TokenizedDoc>,
}

/// Encode every document with the vocabulary, truncating to `max_seq_len`.
pub fn tokenize(corpus: &Corpus, vocab: &Vocab, max_seq_len: usize) -> TokenizedCorpus {
    TokenizedCorpus {
        docs: corpus
            .docs
            .iter()
            .map(|d| TokenizedDoc {
                ids: vocab.encode(&d.text, max_seq_len),
                coarse: d.coarse,
                fine: d.fine,
                split: d.split,
            })
            .collect(),
    }
}

impl TokenizedCorpus {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.docs
            .iter()
            .enumerate()
            .filter(|(_, d)| d.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A padded training batch. Deliberately carries no fine labels: the
/// training path can only ever see tokens, masks and coarse labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n: usize,
    pub t: usize,
    /// Row-major `[n, t]` token ids, PAD-filled.
    pub tokens: Vec<u32>,
    /// Row-major `[n, t]` mask, 1.0 at real tokens.
    pub mask: Vec<f64>,
    pub coarse: Vec<usize>,
    /// Positions of these documents in the tokenized corpus.
    pub doc_indices: Vec<usize>,
}

/// Assemble a batch from explicit document indices, padding to the longest
/// sequence among them.
pub fn batch_from_indices(tc: &TokenizedCorpus, indices: &[usize]) -> Batch {
    let n = indices.len();
    let t = indices
        .iter()
        .map(|&i| tc.docs[i].ids.len())
        .max()
        .unwrap_or(1);
    let mut tokens = vec![PAD_ID; n * t];
    let mut mask = vec![0.0; n * t];
    let mut coarse = Vec::with_capacity(n);
    for (row, &i) in indices.iter().enumerate() {
        let doc = &tc.docs[i];
        for (col, &id) in doc.ids.iter().enumerate() {
            tokens[row * t + col] = id;
            mask[row * t + col] = 1.0;
        }
        coarse.push(doc.coarse);
    }
    Batch {
        n,
        t,
        tokens,
        mask,
        coarse,
        doc_indices: indices.to_vec(),
    }
}

/// Shuffled batches for one epoch, keyed by (seed, epoch). The final short
/// batch is kept when it holds at least two documents, otherwise dropped.
pub fn batches(
    tc: &TokenizedCorpus,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::invalid("batches", "batch_size must be at least 2"));
    }
    let mut order = tc.split_indices(split);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(seed, epoch));
    order.shuffle(&mut rng);
    let mut out = Vec::new();
    for chunk in order.chunks(batch_size) {
        if chunk.len() < 2 {
            break;
        }
        out.push(batch_from_indices(tc, chunk));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, generate_synthetic, Document, SyntheticSpec};
    use std::collections::HashMap;

    fn tiny_tc(n: usize) -> TokenizedCorpus {
        TokenizedCorpus {
            docs: (0..n)
                .map(|i| TokenizedDoc {
                    ids: vec![2 + (i % 3) as u32; 1 + i % 4],
                    coarse: i % 2,
                    fine: Some(i % 4),
                    split: Split::Train,
                })
                .collect(),
        }
    }

    #[test]
    fn batch_sizes_come_out_as_expected() {
        // 100 docs at batch 32 -> [32, 32, 32, 4].
        let tc = tiny_tc(100);
        let bs = batches(&tc, Split::Train, 32, 0, 0).unwrap();
        let sizes: Vec<usize> = bs.iter().map(|b| b.n).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
    }

    #[test]
    fn short_remainder_below_two_is_dropped() {
        let tc = tiny_tc(65);
        let bs = batches(&tc, Split::Train, 32, 0, 0).unwrap();
        let sizes: Vec<usize> = bs.iter().map(|b| b.n).collect();
        assert_eq!(sizes, vec![32, 32], "trailing singleton dropped");
    }

    #[test]
    fn same_seed_epoch_gives_identical_order() {
        let tc = tiny_tc(50);
        let a = batches(&tc, Split::Train, 16, 9, 3).unwrap();
        let b = batches(&tc, Split::Train, 16, 9, 3).unwrap();
        let flat = |bs: &[Batch]| -> Vec<usize> {
            bs.iter().flat_map(|b| b.doc_indices.clone()).collect()
        };
        assert_eq!(flat(&a), flat(&b));
        let c = batches(&tc, Split::Train, 16, 9, 4).unwrap();
        assert_ne!(flat(&a), flat(&c), "different epochs shuffle differently");
    }

    #[test]
    fn union_of_batches_is_the_corpus_multiset() {
        let tc = tiny_tc(100);
        let bs = batches(&tc, Split::Train, 32, 1, 0).unwrap();
        let mut seen: Vec<usize> = bs.iter().flat_map(|b| b.doc_indices.clone()).collect();
        seen.sort_unstable();
        let expected: Vec<usize> = (0..100).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn padding_and_mask_line_up() {
        let tc = TokenizedCorpus {
            docs: vec![
                TokenizedDoc {
                    ids: vec![5, 6, 7],
                    coarse: 0,
                    fine: None,
                    split: Split::Train,
                },
                TokenizedDoc {
                    ids: vec![8],
                    coarse: 1,
                    fine: None,
                    split: Split::Train,
                },
            ],
        };
        let b = batch_from_indices(&tc, &[0, 1]);
        assert_eq!((b.n, b.t), (2, 3));
        assert_eq!(b.tokens, vec![5, 6, 7, 8, PAD_ID, PAD_ID]);
        assert_eq!(b.mask, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(b.coarse, vec![0, 1]);
    }

    #[test]
    fn batch_size_below_two_rejected() {
        let tc = tiny_tc(4);
        assert!(batches(&tc, Split::Train, 1, 0, 0).is_err());
    }

    #[test]
    fn tokenize_respects_max_len_and_splits() {
        let spec = SyntheticSpec {
            train_docs_per_fine: 2,
            test_docs_per_fine: 1,
            ..Default::default()
        };
        let corpus = generate_synthetic(&spec).unwrap();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let tc = tokenize(&corpus, &vocab, 5);
        assert!(tc.docs.iter().all(|d| d.ids.len() <= 5));
        assert_eq!(tc.split_indices(Split::Test).len(), 12);
    }

    #[test]
    fn empty_text_becomes_single_unk() {
        let corpus = Corpus {
            docs: vec![
                Document {
                    text: "real doc".into(),
                    coarse: 0,
                    fine: None,
                    split: Split::Train,
                },
                Document {
                    text: "".into(),
                    coarse: 0,
                    fine: None,
                    split: Split::Train,
                },
            ],
            coarse_names: vec!["c".into()],
            fine_names: vec![],
            fine_parent: vec![],
        };
        let vocab = build_vocab(&corpus, 1).unwrap();
        let tc = tokenize(&corpus, &vocab, 8);
        assert_eq!(tc.docs[1].ids, vec![crate::data::UNK_ID]);
    }

    #[test]
    fn batches_never_expose_fine_labels() {
        // The Batch type itself is the guard; this pins the field set.
        let tc = tiny_tc(8);
        let bs = batches(&tc, Split::Train, 4, 0, 0).unwrap();
        let b = &bs[0];
        let _: (&Vec<u32>, &Vec<f64>, &Vec<usize>, &Vec<usize>) =
            (&b.tokens, &b.mask, &b.coarse, &b.doc_indices);
        let per_label: HashMap<usize, usize> =
            b.coarse.iter().fold(HashMap::new(), |mut m, &c| {
                *m.entry(c).or_insert(0) += 1;
                m
            });
        assert!(per_label.keys().all(|&c| c < 2));
    }
}
