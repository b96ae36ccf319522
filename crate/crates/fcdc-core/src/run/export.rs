//! Raw embedding export: one JSON line per document with its deep and
//! shallow vectors, for external projection or analysis tools.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Corpus, Split};
use crate::encoder::Checkpoint;
use crate::error::Result;
use crate::tensor::Precision;

use super::eval::{coarse_id_map, encode_split};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: usize,
    pub coarse: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine: Option<String>,
    pub split: String,
    pub deep: Vec<f64>,
    pub shallow: Vec<f64>,
}

/// Encode every document (eval mode) and write records in corpus order.
pub fn export_embeddings(
    ckpt: &Checkpoint,
    corpus: &Corpus,
    out_path: impl AsRef<Path>,
    batch_size: usize,
    precision: Precision,
) -> Result<usize> {
    corpus.validate()?;
    coarse_id_map(&ckpt.coarse_names, corpus)?;
    let tc = tokenize(corpus, &ckpt.vocab, ckpt.params.config.max_seq_len);
    let all: Vec<usize> = (0..tc.docs.len()).collect();
    let enc = encode_split(&ckpt.params, &tc, &all, batch_size, precision)?;

    let file = fs::File::create(out_path)?;
    let mut w = BufWriter::new(file);
    let h = ckpt.params.config.hidden_dim;
    for (id, doc) in corpus.docs.iter().enumerate() {
        let record = EmbeddingRecord {
            id,
            coarse: corpus.coarse_names[doc.coarse].clone(),
            fine: doc.fine.map(|f| corpus.fine_names[f].clone()),
            split: match doc.split {
                Split::Train => "train",
                Split::Test => "test",
            }
            .to_string(),
            deep: enc.deep.data()[id * h..(id + 1) * h].to_vec(),
            shallow: enc.shallow.data()[id * h..(id + 1) * h].to_vec(),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(corpus.docs.len())
}
