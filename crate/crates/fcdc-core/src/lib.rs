//! Fine-grained category discovery under coarse-grained supervision.
//!
//! A desk-scale laboratory: a small tap-layered transformer encoder is
//! trained with a hierarchical weighted self-contrastive objective using only
//! coarse class labels, then fine-grained clusters are discovered with
//! k-means and scored against held-out fine labels.
//!
//! The crate is organized along the pipeline:
//!
//! - [`tensor`] / [`tape`] — dense tensors and reverse-mode autodiff with a
//!   finite-difference gradient checker
//! - [`encoder`] — the transformer with a configurable shallow tap layer and
//!   its momentum twin
//! - [`contrastive`] — class-conditional queues, weighted self-contrastive
//!   loss and distance diagnostics
//! - [`clustering`] / [`metrics`] — k-means discovery and Hungarian-aligned
//!   ACC plus ARI/NMI scoring
//! - [`data`] — synthetic hierarchical corpora, JSONL/TSV ingestion,
//!   vocabulary and batching
//! - [`optim`] — AdamW with global gradient-norm clipping
//! - [`run`] — experiment configuration, the training loop, evaluation,
//!   sweeps and artifact export

pub mod clustering;
pub mod contrastive;
pub mod data;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod run;
pub mod tape;
pub mod tensor;

pub(crate) mod rng;

pub use error::{Error, Result};
pub use tape::{Mode, Tape, TapeCfg, Var};
pub use tensor::{Precision, Tensor};
