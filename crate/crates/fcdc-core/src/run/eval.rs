//! Evaluation: encode the test split deterministically, score coarse
//! accuracy from the output head, discover fine clusters with k-means over
//! the deep features, and align them with held-out fine labels.

use crate::clustering::{kmeans_best_of, KMeansParams};
use crate::contrastive::distance_diagnostics;
use crate::data::{batch_from_indices, tokenize, Corpus, Split, TokenizedCorpus};
use crate::encoder::{encode, Checkpoint, EncoderParams};
use crate::error::{Error, Result};
use crate::metrics::{adjusted_rand_index, clustering_accuracy, normalized_mutual_info};
use crate::tape::Mode;
use crate::tensor::{Precision, Tensor};

use super::report::EvalBlock;

#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub k_fine: usize,
    pub kmeans_restarts: usize,
    pub kmeans_seed: u64,
    pub kmeans_normalize: bool,
    pub eval_batch_size: usize,
    pub precision: Precision,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k_fine: 0,
            kmeans_restarts: 10,
            kmeans_seed: 7,
            kmeans_normalize: false,
            eval_batch_size: 64,
            precision: Precision::F64,
        }
    }
}

/// Deep and shallow features plus head predictions for a document set,
/// in corpus order.
pub struct EncodedSplit {
    pub doc_indices: Vec<usize>,
    pub deep: Tensor,
    pub shallow: Tensor,
    pub pred_coarse: Vec<usize>,
}

/// Encode the given documents in eval mode, batching for throughput.
/// Padding is masked out of attention and pooling, so results are
/// independent of batch composition.
pub fn encode_split(
    params: &EncoderParams,
    tc: &TokenizedCorpus,
    doc_indices: &[usize],
    batch_size: usize,
    precision: Precision,
) -> Result<EncodedSplit> {
    if doc_indices.is_empty() {
        return Err(Error::invalid("encode_split", "no documents to encode"));
    }
    let h = params.config.hidden_dim;
    let mut deep = Vec::with_capacity(doc_indices.len() * h);
    let mut shallow = Vec::with_capacity(doc_indices.len() * h);
    let mut pred_coarse = Vec::with_capacity(doc_indices.len());
    for chunk in doc_indices.chunks(batch_size) {
        let b = batch_from_indices(tc, chunk);
        let f = encode(params, &b.tokens, &b.mask, b.n, b.t, Mode::Eval, precision, 0)?;
        deep.extend_from_slice(f.deep.data());
        shallow.extend_from_slice(f.shallow.data());
        let m = params.config.num_coarse_classes;
        for i in 0..b.n {
            let row = &f.out_logits.data()[i * m..(i + 1) * m];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            pred_coarse.push(argmax);
        }
    }
    Ok(EncodedSplit {
        doc_indices: doc_indices.to_vec(),
        deep: Tensor::new(vec![doc_indices.len(), h], deep)?,
        shallow: Tensor::new(vec![doc_indices.len(), h], shallow)?,
        pred_coarse,
    })
}

/// Map a corpus's coarse labels onto the checkpoint's coarse id order.
/// Unknown label names are a compatibility error.
pub fn coarse_id_map(ckpt_names: &[String], corpus: &Corpus) -> Result<Vec<usize>> {
    corpus
        .coarse_names
        .iter()
        .map(|name| {
            ckpt_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| {
                    Error::VocabMismatch(format!(
                        "corpus coarse label {name:?} is unknown to the checkpoint"
                    ))
                })
        })
        .collect()
}

/// Score a checkpoint against a corpus's test split.
pub fn evaluate(ckpt: &Checkpoint, corpus: &Corpus, settings: &EvalSettings) -> Result<EvalBlock> {
    corpus.validate()?;
    let label_map = coarse_id_map(&ckpt.coarse_names, corpus)?;
    let tc = tokenize(corpus, &ckpt.vocab, ckpt.params.config.max_seq_len);
    evaluate_tokenized(&ckpt.params, &tc, corpus, &label_map, settings)
}

/// Inner evaluation over a pre-tokenized corpus (`label_map[i]` maps corpus
/// coarse id `i` onto the model's output index).
pub fn evaluate_tokenized(
    params: &EncoderParams,
    tc: &TokenizedCorpus,
    corpus: &Corpus,
    label_map: &[usize],
    settings: &EvalSettings,
) -> Result<EvalBlock> {
    let test_idx = tc.split_indices(Split::Test);
    if test_idx.is_empty() {
        return Err(Error::invalid("evaluate", "corpus has no test documents"));
    }
    let enc = encode_split(
        params,
        tc,
        &test_idx,
        settings.eval_batch_size,
        settings.precision,
    )?;

    // Coarse accuracy: output-head argmax against mapped coarse labels.
    let mut correct = 0usize;
    for (row, &doc) in test_idx.iter().enumerate() {
        if enc.pred_coarse[row] == label_map[corpus.docs[doc].coarse] {
            correct += 1;
        }
    }
    let coarse_accuracy = correct as f64 / test_idx.len() as f64;

    // Fine-cluster scores need held-out fine labels.
    let labeled: Vec<(usize, usize)> = test_idx
        .iter()
        .enumerate()
        .filter_map(|(row, &doc)| corpus.docs[doc].fine.map(|f| (row, f)))
        .collect();
    let (fine_acc, fine_ari, fine_nmi, d_fine, d_coarse, kmeans_inertia) = if labeled.len() >= 2 {
        let k = if settings.k_fine > 0 {
            settings.k_fine
        } else {
            corpus.num_fine()
        };
        if k == 0 {
            return Err(Error::invalid(
                "evaluate",
                "k_fine is 0 and the corpus names no fine classes",
            ));
        }
        let h = params.config.hidden_dim;
        let mut data = Vec::with_capacity(labeled.len() * h);
        let mut truth = Vec::with_capacity(labeled.len());
        let mut coarse_truth = Vec::with_capacity(labeled.len());
        for &(row, f) in &labeled {
            data.extend_from_slice(&enc.deep.data()[row * h..(row + 1) * h]);
            truth.push(f);
            coarse_truth.push(corpus.docs[test_idx[row]].coarse);
        }
        let feats = Tensor::new(vec![labeled.len(), h], data)?;
        let k = k.min(labeled.len());
        let km = kmeans_best_of(
            &feats,
            k,
            settings.kmeans_restarts,
            settings.kmeans_seed,
            KMeansParams {
                normalize: settings.kmeans_normalize,
                ..Default::default()
            },
        )?;
        let acc = clustering_accuracy(&km.assignments, &truth)?;
        let ari = adjusted_rand_index(&km.assignments, &truth)?;
        let nmi = normalized_mutual_info(&km.assignments, &truth)?;
        let diag = distance_diagnostics(&feats, &coarse_truth, &truth)?;
        (
            Some(acc),
            Some(ari),
            Some(nmi),
            diag.d_fine,
            diag.d_coarse,
            Some(km.inertia),
        )
    } else {
        (None, None, None, None, None, None)
    };

    Ok(EvalBlock {
        coarse_accuracy,
        fine_acc,
        fine_ari,
        fine_nmi,
        d_fine,
        d_coarse,
        kmeans_inertia,
    })
}
