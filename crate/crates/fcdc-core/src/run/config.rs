//! Experiment configuration: one flat, fully-documented JSON key set.
//! Unknown keys are errors; every field has a desk-scale default.

use serde::{Deserialize, Serialize};

use crate::contrastive::ContrastiveConfig;
use crate::data::SyntheticSpec;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::optim::OptConfig;
use crate::tensor::Precision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    // ── encoder geometry ──
    pub num_layers: usize,
    pub tap_layer: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout_p: f64,
    pub precision: Precision,

    // ── contrastive objective ──
    pub tau: f64,
    pub alpha_same: f64,
    pub alpha_diff: f64,
    pub alpha_momentum: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub momentum: f64,
    pub queue_capacity: usize,
    pub use_momentum: bool,
    pub use_weighting: bool,
    pub use_self_contrast: bool,
    pub use_shallow_ce: bool,
    pub add_positive_to_denominator: bool,

    // ── optimizer ──
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm threshold; null disables clipping.
    pub clip_norm: Option<f64>,

    // ── data source: a corpus file, or the synthetic generator ──
    /// JSONL or TSV corpus path. When null the synthetic spec below is used.
    pub data_path: Option<String>,
    pub min_freq: usize,
    pub synth_coarse_classes: usize,
    pub synth_fine_per_coarse: usize,
    pub synth_train_docs_per_fine: usize,
    pub synth_test_docs_per_fine: usize,
    pub synth_doc_len: usize,
    pub synth_coarse_pool: usize,
    pub synth_fine_pool: usize,
    pub synth_noise_pool: usize,
    pub synth_p_coarse: f64,
    pub synth_p_fine: f64,
    pub synth_p_noise: f64,

    // ── training and evaluation ──
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    /// Number of fine clusters K; 0 infers it from the corpus fine labels.
    pub k_fine: usize,
    pub kmeans_restarts: usize,
    pub kmeans_normalize: bool,
    /// Epochs at which to run the evaluation probe; null probes at
    /// {0, mid, final}.
    pub probe_epochs: Option<Vec<usize>>,

    // ── seeds ──
    pub model_seed: u64,
    pub data_seed: u64,
    pub kmeans_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        ExperimentConfig {
            num_layers: 4,
            tap_layer: 2,
            hidden_dim: 64,
            num_heads: 4,
            ffn_dim: 128,
            max_seq_len: 32,
            dropout_p: 0.1,
            precision: Precision::F64,

            tau: 0.1,
            alpha_same: 1.0,
            alpha_diff: 1.4,
            alpha_momentum: 1.0,
            gamma1: 0.001,
            gamma2: 0.008,
            momentum: 0.9,
            queue_capacity: 128,
            use_momentum: true,
            use_weighting: true,
            use_self_contrast: true,
            use_shallow_ce: true,
            add_positive_to_denominator: false,

            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(1.0),

            data_path: None,
            min_freq: 1,
            synth_coarse_classes: synth.coarse_classes,
            synth_fine_per_coarse: synth.fine_per_coarse,
            synth_train_docs_per_fine: synth.train_docs_per_fine,
            synth_test_docs_per_fine: synth.test_docs_per_fine,
            synth_doc_len: synth.doc_len,
            synth_coarse_pool: synth.coarse_pool_size,
            synth_fine_pool: synth.fine_pool_size,
            synth_noise_pool: synth.noise_pool_size,
            synth_p_coarse: synth.p_coarse,
            synth_p_fine: synth.p_fine,
            synth_p_noise: synth.p_noise,

            epochs: 20,
            batch_size: 32,
            eval_batch_size: 64,
            k_fine: 0,
            kmeans_restarts: 10,
            kmeans_normalize: false,
            probe_epochs: None,

            model_seed: 1,
            data_seed: 13,
            kmeans_seed: 7,
        }
    }
}

impl ExperimentConfig {
    /// Parse from JSON, rejecting unknown keys.
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Whole-config validation, run before any work starts.
    pub fn validate(&self) -> Result<()> {
        // Encoder geometry is checked with placeholder data-dependent
        // extents; vocab size and class count come from the corpus later.
        let enc = self.encoder_config(16, 2);
        enc.validate()?;
        self.contrastive_config().validate()?;
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".to_string()));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err(Error::Config("clip_norm must be positive when set".to_string()));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".to_string()));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Config("eval_batch_size must be positive".to_string()));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Config("kmeans_restarts must be positive".to_string()));
        }
        if self.data_path.is_none() {
            self.synthetic_spec().validate_public()?;
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize, num_coarse: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_seq_len: self.max_seq_len,
            num_layers: self.num_layers,
            tap_layer: self.tap_layer,
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            dropout_p: self.dropout_p,
            num_coarse_classes: num_coarse,
        }
    }

    pub fn contrastive_config(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            alpha_same: self.alpha_same,
            alpha_diff: self.alpha_diff,
            alpha_momentum: self.alpha_momentum,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            momentum: self.momentum,
            queue_capacity: self.queue_capacity,
            use_momentum: self.use_momentum,
            use_weighting: self.use_weighting,
            use_self_contrast: self.use_self_contrast,
            use_shallow_ce: self.use_shallow_ce,
            add_positive_to_denominator: self.add_positive_to_denominator,
        }
    }

    pub fn opt_config(&self) -> OptConfig {
        OptConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            coarse_classes: self.synth_coarse_classes,
            fine_per_coarse: self.synth_fine_per_coarse,
            train_docs_per_fine: self.synth_train_docs_per_fine,
            test_docs_per_fine: self.synth_test_docs_per_fine,
            doc_len: self.synth_doc_len,
            coarse_pool_size: self.synth_coarse_pool,
            fine_pool_size: self.synth_fine_pool,
            noise_pool_size: self.synth_noise_pool,
            p_coarse: self.synth_p_coarse,
            p_fine: self.synth_p_fine,
            p_noise: self.synth_p_noise,
            seed: self.data_seed,
        }
    }

    /// Probe schedule: explicit list, or {0, mid, final}.
    pub fn probe_schedule(&self) -> Vec<usize> {
        match &self.probe_epochs {
            Some(list) => {
                let mut v: Vec<usize> = list.iter().copied().filter(|&e| e <= self.epochs).collect();
                v.sort_unstable();
                v.dedup();
                v
            }
            None => {
                let mut v = vec![0, self.epochs / 2, self.epochs];
                v.sort_unstable();
                v.dedup();
                v
            }
        }
    }

    /// Stable FNV-1a hash of the canonical JSON, for traceability.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Tiny geometry with dropout off, for gradient checking.
    pub fn tiny_gradcheck() -> Self {
        ExperimentConfig {
            num_layers: 2,
            tap_layer: 1,
            hidden_dim: 16,
            num_heads: 2,
            ffn_dim: 24,
            max_seq_len: 8,
            dropout_p: 0.0,
            synth_train_docs_per_fine: 2,
            synth_test_docs_per_fine: 1,
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        }
    }
}

impl SyntheticSpec {
    pub(crate) fn validate_public(&self) -> Result<()> {
        // Reuse the generator's validation without generating.
        crate::data::generate_synthetic(&SyntheticSpec {
            train_docs_per_fine: 1,
            test_docs_per_fine: 0,
            ..self.clone()
        })
        .map(|_| ())
    }
}
