//! Run reports: per-epoch loss rows, evaluation blocks and probes.
//! Everything except wall-clock timings is bitwise reproducible for a fixed
//! config and seeds; `deterministic_view` strips the timing fields so
//! reproducibility can be asserted on the rest.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub model: u64,
    pub data: u64,
    pub kmeans: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub mean_sup_deep: f64,
    pub mean_sup_shallow: f64,
    pub mean_contrastive: f64,
    pub mean_total: f64,
    pub wall_clock_s: f64,
}

/// One evaluation pass: coarse accuracy from the output head, fine-cluster
/// scores from k-means over test deep features, and distance diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalBlock {
    pub coarse_accuracy: f64,
    pub fine_acc: Option<f64>,
    pub fine_ari: Option<f64>,
    pub fine_nmi: Option<f64>,
    pub d_fine: Option<f64>,
    pub d_coarse: Option<f64>,
    pub kmeans_inertia: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub epoch: usize,
    #[serde(flatten)]
    pub eval: EvalBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seeds: Seeds,
    pub epochs: Vec<EpochRow>,
    pub probes: Vec<ProbeRow>,
    pub final_eval: EvalBlock,
    pub wall_clock_total_s: f64,
}

impl RunReport {
    /// The report without its wall-clock fields: the portion that must be
    /// bitwise identical across reruns with the same config and seeds.
    pub fn deterministic_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_clock_total_s");
            if let Some(rows) = obj.get_mut("epochs").and_then(|e| e.as_array_mut()) {
                for row in rows {
                    if let Some(r) = row.as_object_mut() {
                        r.remove("wall_clock_s");
                    }
                }
            }
        }
        v
    }
}

/// One JSONL record per training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub sup_deep: f64,
    pub sup_shallow: f64,
    pub contrastive: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub queue_fill: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block() -> EvalBlock {
        EvalBlock {
            coarse_accuracy: 0.5,
            fine_acc: Some(0.25),
            fine_ari: Some(0.1),
            fine_nmi: Some(0.3),
            d_fine: Some(0.2),
            d_coarse: Some(0.8),
            kmeans_inertia: Some(12.5),
        }
    }

    #[test]
    fn deterministic_view_strips_only_timings() {
        let a = RunReport {
            config_hash: "abc".into(),
            seeds: Seeds {
                model: 1,
                data: 2,
                kmeans: 3,
            },
            epochs: vec![EpochRow {
                epoch: 1,
                mean_sup_deep: 1.0,
                mean_sup_shallow: 2.0,
                mean_contrastive: 3.0,
                mean_total: 4.0,
                wall_clock_s: 9.9,
            }],
            probes: vec![ProbeRow {
                epoch: 0,
                eval: block(),
            }],
            final_eval: block(),
            wall_clock_total_s: 100.0,
        };
        let mut b = a.clone();
        b.wall_clock_total_s = 2.0;
        b.epochs[0].wall_clock_s = 0.1;
        assert_ne!(a, b);
        assert_eq!(a.deterministic_view(), b.deterministic_view());

        let mut c = b.clone();
        c.final_eval.coarse_accuracy = 0.9;
        assert_ne!(a.deterministic_view(), c.deterministic_view());
    }
}
