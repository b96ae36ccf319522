//! Corpus types, synthetic generation, ingestion, vocabulary and batching.
//!
//! Fine labels ride along for evaluation only: the batch type handed to
//! training carries tokens, masks and coarse labels, nothing else.

mod batches;
mod io;
mod synthetic;
mod vocab;

pub use batches::{batch_from_indices, batches, tokenize, Batch, TokenizedCorpus, TokenizedDoc};
pub use io::{load_corpus, load_jsonl, load_tsv, write_jsonl};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use vocab::{build_vocab, Vocab, PAD_ID, UNK_ID};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One text with its coarse label and an optional held-out fine label.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub text: String,
    pub coarse: usize,
    /// Used only by evaluation; never visible to the training path.
    pub fine: Option<usize>,
    pub split: Split,
}

/// A labeled document collection with a strict fine-under-coarse hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub docs: Vec<Document>,
    pub coarse_names: Vec<String>,
    pub fine_names: Vec<String>,
    /// Parent coarse class of each fine class.
    pub fine_parent: Vec<usize>,
}

impl Corpus {
    pub fn num_coarse(&self) -> usize {
        self.coarse_names.len()
    }

    pub fn num_fine(&self) -> usize {
        self.fine_names.len()
    }

    pub fn train_docs(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter().filter(|d| d.split == Split::Train)
    }

    pub fn test_docs(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter().filter(|d| d.split == Split::Test)
    }

    /// Structural checks: label ranges, hierarchy consistency, and at least
    /// one training document per coarse class.
    pub fn validate(&self) -> Result<()> {
        if self.docs.is_empty() {
            return Err(Error::NoDocuments);
        }
        if self.fine_parent.len() != self.fine_names.len() {
            return Err(Error::invalid("corpus", "fine_parent length mismatch"));
        }
        for &p in &self.fine_parent {
            if p >= self.num_coarse() {
                return Err(Error::invalid("corpus", "fine_parent out of range"));
            }
        }
        let mut coarse_has_train = vec![false; self.num_coarse()];
        for (i, d) in self.docs.iter().enumerate() {
            if d.coarse >= self.num_coarse() {
                return Err(Error::invalid(
                    "corpus",
                    format!("document {i}: coarse id {} out of range", d.coarse),
                ));
            }
            if let Some(f) = d.fine {
                if f >= self.num_fine() {
                    return Err(Error::invalid(
                        "corpus",
                        format!("document {i}: fine id {f} out of range"),
                    ));
                }
                if self.fine_parent[f] != d.coarse {
                    return Err(Error::HierarchyViolation {
                        fine: self.fine_names[f].clone(),
                        first: self.coarse_names[self.fine_parent[f]].clone(),
                        second: self.coarse_names[d.coarse].clone(),
                    });
                }
            }
            if d.split == Split::Train {
                coarse_has_train[d.coarse] = true;
            }
        }
        if let Some(c) = coarse_has_train.iter().position(|&h| !h) {
            return Err(Error::invalid(
                "corpus",
                format!("coarse class {:?} has no training documents", self.coarse_names[c]),
            ));
        }
        Ok(())
    }
}
