//! The weighted self-contrastive objective.
//!
//! Each deep feature serves as a query whose positive key is its own
//! shallow feature; negatives are the shallow and deep features of the other
//! in-batch samples, split by coarse label into differently-weighted groups,
//! plus momentum-encoded entries from the query's class queue. The
//! denominator holds only negative terms (an InfoNCE-style variant that also
//! adds the positive is available behind a flag).
//!
//! The per-similarity gradient law is exposed as a pure function: the
//! positive similarity always receives -1/tau, and each negative receives
//! alpha * P where P is its softmax share of the denominator scaled by
//! 1/tau. Tests hold the tape implementation to that law.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Temperature, group weights, loss mix and queue/momentum settings,
/// including the ablation switches.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub alpha_same: f64,
    pub alpha_diff: f64,
    pub alpha_momentum: f64,
    /// Weight of the shallow cross-entropy term.
    pub gamma1: f64,
    /// Weight of the contrastive term.
    pub gamma2: f64,
    /// EMA factor for the momentum encoder.
    pub momentum: f64,
    pub queue_capacity: usize,
    pub use_momentum: bool,
    pub use_weighting: bool,
    pub use_self_contrast: bool,
    pub use_shallow_ce: bool,
    /// InfoNCE-style variant: also count the positive in the denominator.
    pub add_positive_to_denominator: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
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
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        for (name, a) in [
            ("alpha_same", self.alpha_same),
            ("alpha_diff", self.alpha_diff),
            ("alpha_momentum", self.alpha_momentum),
        ] {
            if a < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0, got {a}")));
            }
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1]".to_string()));
        }
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 {
            return Err(Error::Config("gamma weights must be >= 0".to_string()));
        }
        Ok(())
    }

    /// Group weights with the ablation switch applied.
    pub fn effective_alphas(&self) -> (f64, f64, f64) {
        if self.use_weighting {
            (self.alpha_same, self.alpha_diff, self.alpha_momentum)
        } else {
            (1.0, 1.0, 1.0)
        }
    }
}

/// M fixed-capacity FIFO queues of momentum-encoded deep features, one per
/// coarse class. Entries are plain vectors with no gradient linkage.
#[derive(Debug, Clone)]
pub struct QueueBank {
    queues: Vec<VecDeque<Vec<f64>>>,
    capacity: usize,
}

impl QueueBank {
    pub fn new(num_classes: usize, capacity: usize) -> Self {
        QueueBank {
            queues: (0..num_classes).map(|_| VecDeque::new()).collect(),
            capacity,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.queues.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self, class: usize) -> usize {
        self.queues[class].len()
    }

    pub fn fill_levels(&self) -> Vec<usize> {
        self.queues.iter().map(|q| q.len()).collect()
    }

    pub fn entries(&self, class: usize) -> impl Iterator<Item = &[f64]> {
        self.queues[class].iter().map(|v| v.as_slice())
    }

    /// Append each momentum deep feature to its class queue, evicting
    /// oldest-first past capacity. Runs once per step, after the loss.
    pub fn enqueue_batch(&mut self, momentum_deep: &Tensor, coarse: &[usize]) -> Result<()> {
        let shape = momentum_deep.shape();
        if shape.len() != 2 || shape[0] != coarse.len() {
            return Err(Error::invalid(
                "enqueue_batch",
                format!("features {:?} vs {} labels", shape, coarse.len()),
            ));
        }
        if let Some(&bad) = coarse.iter().find(|&&c| c >= self.queues.len()) {
            return Err(Error::invalid(
                "enqueue_batch",
                format!("label {bad} out of range for {} queues", self.queues.len()),
            ));
        }
        for (i, &c) in coarse.iter().enumerate() {
            if self.capacity == 0 {
                continue;
            }
            let q = &mut self.queues[c];
            q.push_back(momentum_deep.row(i));
            while q.len() > self.capacity {
                q.pop_front();
            }
        }
        Ok(())
    }
}

/// Which feature of an in-batch sample a negative key refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Shallow,
    Deep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegKey {
    pub index: usize,
    pub depth: Depth,
}

/// The three negative groups for one query.
#[derive(Debug, Clone)]
pub struct NegativeGroups {
    /// In-batch samples with a different coarse label (shallow and deep).
    pub diff: Vec<NegKey>,
    /// In-batch samples sharing the coarse label (shallow and deep).
    pub same: Vec<NegKey>,
    /// Momentum queue entries for the query's coarse class.
    pub momentum: Vec<Vec<f64>>,
}

impl NegativeGroups {
    pub fn total(&self) -> usize {
        self.diff.len() + self.same.len() + self.momentum.len()
    }
}

/// Group the negatives for query `i`: both features of every other in-batch
/// sample, split by label, plus the full current content of the query's
/// class queue (empty groups are legal).
pub fn assemble_negatives(
    i: usize,
    coarse: &[usize],
    bank: &QueueBank,
    use_momentum: bool,
) -> Result<NegativeGroups> {
    let n = coarse.len();
    if i >= n {
        return Err(Error::invalid(
            "assemble_negatives",
            format!("query index {i} out of batch of {n}"),
        ));
    }
    let mut diff = Vec::new();
    let mut same = Vec::new();
    for j in 0..n {
        if j == i {
            continue;
        }
        let keys = [
            NegKey {
                index: j,
                depth: Depth::Shallow,
            },
            NegKey {
                index: j,
                depth: Depth::Deep,
            },
        ];
        if coarse[j] == coarse[i] {
            same.extend_from_slice(&keys);
        } else {
            diff.extend_from_slice(&keys);
        }
    }
    let momentum = if use_momentum {
        bank.entries(coarse[i]).map(|e| e.to_vec()).collect()
    } else {
        Vec::new()
    };
    Ok(NegativeGroups {
        diff,
        same,
        momentum,
    })
}

// ── The loss as plain similarity arithmetic ──────────────────────────

/// One query's similarities: the positive plus per-group (alpha, sims).
#[derive(Debug, Clone)]
pub struct SimGroups {
    pub sim_pos: f64,
    pub groups: Vec<(f64, Vec<f64>)>,
}

fn denominator(g: &SimGroups, tau: f64, add_pos: bool) -> f64 {
    let mut d = 0.0;
    for (alpha, sims) in &g.groups {
        for &s in sims {
            d += alpha * (s / tau).exp();
        }
    }
    if add_pos {
        d += (g.sim_pos / tau).exp();
    }
    d
}

/// Per-query loss value given raw similarities:
/// `-log( exp(sim_pos/tau) / sum_l alpha_l sum_k exp(sim_k/tau) )`.
pub fn loss_from_sims(g: &SimGroups, tau: f64, add_pos: bool) -> f64 {
    denominator(g, tau, add_pos).ln() - g.sim_pos / tau
}

/// Analytic per-similarity gradients of [`loss_from_sims`].
///
/// The positive receives exactly `-1/tau` (plus its own softmax share in
/// the InfoNCE variant); negative `j` in group `l` receives
/// `alpha_l * (1/tau) * exp(sim_j/tau) / denominator`.
pub fn gradient_wrt_sims(g: &SimGroups, tau: f64, add_pos: bool) -> (f64, Vec<Vec<f64>>) {
    let d = denominator(g, tau, add_pos);
    let groups = g
        .groups
        .iter()
        .map(|(alpha, sims)| {
            sims.iter()
                .map(|&s| alpha * (s / tau).exp() / (tau * d))
                .collect()
        })
        .collect();
    let d_pos = if add_pos {
        -1.0 / tau + (g.sim_pos / tau).exp() / (tau * d)
    } else {
        -1.0 / tau
    };
    (d_pos, groups)
}

// ── The loss on the tape ─────────────────────────────────────────────

/// Positive-key selection for the contrastive loss.
#[derive(Clone, Copy)]
pub enum PositiveKey {
    /// The query's own shallow feature (the self-contrastive scheme).
    OwnShallow,
    /// No positive key at all: the loss degenerates to the log of the
    /// weighted negative sum, pure repulsion. This is what removing the
    /// self-contrastive strategy leaves behind.
    None,
    /// Row-wise override; pairs each query with the matching row of the
    /// given `[N, h]` tensor (e.g. a dropout-perturbed second pass).
    Rows(Var),
}

/// Build the weighted self-contrastive loss on the tape. Gradients flow
/// through queries, positives and in-batch negatives; queue entries enter
/// as constants.
pub fn weighted_self_contrastive_loss(
    tape: &mut Tape,
    shallow: Var,
    deep: Var,
    positive: PositiveKey,
    coarse: &[usize],
    bank: &QueueBank,
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    cfg.validate()?;
    let n = coarse.len();
    let shape = tape.shape(deep).to_vec();
    if shape.len() != 2 || shape[0] != n || tape.shape(shallow) != shape.as_slice() {
        return Err(Error::invalid(
            "contrastive_loss",
            format!("features {:?} vs {} labels", shape, n),
        ));
    }
    let (alpha_same, alpha_diff, alpha_m) = cfg.effective_alphas();

    let shallow_rows: Vec<Var> = (0..n).map(|i| tape.row(shallow, i)).collect::<Result<_>>()?;
    let deep_rows: Vec<Var> = (0..n).map(|i| tape.row(deep, i)).collect::<Result<_>>()?;
    let pos_rows: Option<Vec<Var>> = match positive {
        PositiveKey::OwnShallow => Some(shallow_rows.clone()),
        PositiveKey::None => None,
        PositiveKey::Rows(p) => {
            if tape.shape(p) != shape.as_slice() {
                return Err(Error::invalid("contrastive_loss", "positive shape mismatch"));
            }
            Some((0..n).map(|i| tape.row(p, i)).collect::<Result<_>>()?)
        }
    };

    // Queue entries become constant leaves once per class.
    let mut queue_vars: HashMap<usize, Vec<Var>> = HashMap::new();
    if cfg.use_momentum {
        for &c in coarse {
            queue_vars.entry(c).or_insert_with(|| {
                bank.entries(c)
                    .map(|e| tape.constant(Tensor::from_vec(e.to_vec())))
                    .collect()
            });
        }
    }

    let mut per_query = Vec::with_capacity(n);
    for i in 0..n {
        let groups = assemble_negatives(i, coarse, bank, cfg.use_momentum)?;
        if groups.total() == 0 {
            return Err(Error::invalid(
                "contrastive_loss",
                format!("query {i} has no negative keys (batch of 1 with empty queues)"),
            ));
        }
        let sim_pos = match &pos_rows {
            Some(rows) => Some(tape.cosine_similarity(deep_rows[i], rows[i])?),
            None => None,
        };

        let mut terms = Vec::with_capacity(groups.total() + 1);
        let mut add_group = |tape: &mut Tape, keys: &[NegKey], alpha: f64| -> Result<()> {
            for key in keys {
                let kv = match key.depth {
                    Depth::Shallow => shallow_rows[key.index],
                    Depth::Deep => deep_rows[key.index],
                };
                let sim = tape.cosine_similarity(deep_rows[i], kv)?;
                let scaled = tape.scale(sim, 1.0 / cfg.tau)?;
                let e = tape.exp(scaled)?;
                terms.push(tape.scale(e, alpha)?);
            }
            Ok(())
        };
        add_group(tape, &groups.diff, alpha_diff)?;
        add_group(tape, &groups.same, alpha_same)?;
        for qv in queue_vars.get(&coarse[i]).into_iter().flatten() {
            let sim = tape.cosine_similarity(deep_rows[i], *qv)?;
            let scaled = tape.scale(sim, 1.0 / cfg.tau)?;
            let e = tape.exp(scaled)?;
            terms.push(tape.scale(e, alpha_m)?);
        }
        if cfg.add_positive_to_denominator {
            if let Some(sp) = sim_pos {
                let scaled = tape.scale(sp, 1.0 / cfg.tau)?;
                terms.push(tape.exp(scaled)?);
            }
        }
        let denom = tape.add_n(&terms)?;
        let log_denom = tape.ln(denom)?;
        per_query.push(match sim_pos {
            Some(sp) => {
                let neg_pos = tape.scale(sp, -1.0 / cfg.tau)?;
                tape.add(log_denom, neg_pos)?
            }
            None => log_denom,
        });
    }
    tape.add_n(&per_query)
}

/// Per-term values of one total-loss evaluation. The breakdown entries are
/// the raw (unweighted) term values; `total` applies the gamma mix.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub sup_deep: f64,
    pub sup_shallow: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// The combined objective: deep cross entropy, plus gamma1 times the
/// shallow cross entropy, plus gamma2 times the contrastive term. Ablation
/// switches drop the corresponding term.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    shallow: Var,
    deep: Var,
    tap_logits: Var,
    out_logits: Var,
    positive: PositiveKey,
    coarse: &[usize],
    bank: &QueueBank,
    cfg: &ContrastiveConfig,
) -> Result<(Var, LossBreakdown)> {
    let sup_deep = tape.cross_entropy_from_logits(out_logits, coarse)?;
    let mut parts = vec![sup_deep];
    let mut sup_shallow_val = 0.0;
    if cfg.use_shallow_ce && cfg.gamma1 > 0.0 {
        let sup_shallow = tape.cross_entropy_from_logits(tap_logits, coarse)?;
        sup_shallow_val = tape.value(sup_shallow).item();
        parts.push(tape.scale(sup_shallow, cfg.gamma1)?);
    }
    let mut contrastive_val = 0.0;
    if cfg.gamma2 > 0.0 {
        let cont =
            weighted_self_contrastive_loss(tape, shallow, deep, positive, coarse, bank, cfg)?;
        contrastive_val = tape.value(cont).item();
        parts.push(tape.scale(cont, cfg.gamma2)?);
    }
    let total = tape.add_n(&parts)?;
    let breakdown = LossBreakdown {
        sup_deep: tape.value(sup_deep).item(),
        sup_shallow: sup_shallow_val,
        contrastive: contrastive_val,
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

// ── Distance diagnostics ─────────────────────────────────────────────

/// Mean cosine distances: within coarse classes across fine sub-classes
/// (`d_fine`) and across coarse classes (`d_coarse`). A diagnostic with no
/// qualifying pair is undefined.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistanceDiagnostics {
    pub d_fine: Option<f64>,
    pub d_coarse: Option<f64>,
}

pub fn distance_diagnostics(
    deep: &Tensor,
    coarse: &[usize],
    fine: &[usize],
) -> Result<DistanceDiagnostics> {
    let shape = deep.shape();
    if shape.len() != 2 || shape[0] != coarse.len() || coarse.len() != fine.len() {
        return Err(Error::invalid(
            "distance_diagnostics",
            "features and label lists must agree in length",
        ));
    }
    let n = coarse.len();
    let h = shape[1];
    let data = deep.data();
    let norms: Vec<f64> = (0..n)
        .map(|i| {
            data[i * h..(i + 1) * h]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if norms.iter().any(|&v| v == 0.0) {
        return Err(Error::ZeroNorm {
            op: "distance_diagnostics",
        });
    }
    let mut fine_acc = (0.0, 0usize);
    let mut coarse_acc = (0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = data[i * h..(i + 1) * h]
                .iter()
                .zip(&data[j * h..(j + 1) * h])
                .map(|(a, b)| a * b)
                .sum();
            let dist = 1.0 - dot / (norms[i] * norms[j]);
            if coarse[i] != coarse[j] {
                coarse_acc.0 += dist;
                coarse_acc.1 += 1;
            } else if fine[i] != fine[j] {
                fine_acc.0 += dist;
                fine_acc.1 += 1;
            }
        }
    }
    let mean = |acc: (f64, usize)| {
        if acc.1 == 0 {
            None
        } else {
            Some(acc.0 / acc.1 as f64)
        }
    };
    Ok(DistanceDiagnostics {
        d_fine: mean(fine_acc),
        d_coarse: mean(coarse_acc),
    })
}
