//! AdamW with decoupled weight decay and global gradient-norm clipping.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct OptConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    cfg: OptConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptState {
    /// Allocate moments mirroring the given parameter list.
    pub fn new(cfg: OptConfig, params: &[&Tensor]) -> Self {
        OptState {
            cfg,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &OptConfig {
        &self.cfg
    }

    /// One bias-corrected adaptive update. Weight decay is decoupled:
    /// applied directly to the parameters, scaled by the learning rate.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::StructuralMismatch {
                op: "optimizer_step",
                msg: format!(
                    "state holds {} tensors, got {} params / {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.m[i].len() || grads[i].len() != self.m[i].len() {
                return Err(Error::StructuralMismatch {
                    op: "optimizer_step",
                    msg: format!("tensor {i} size mismatch"),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let data = p.data_mut();
            for j in 0..data.len() {
                let gj = g[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let decayed = data[j] - c.lr * c.weight_decay * data[j];
                data[j] = decayed - c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`. Returns the observed (pre-clip) norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> Result<f64> {
    if max_norm <= 0.0 {
        return Err(Error::invalid("clip_global_norm", "max_norm must be > 0"));
    }
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}
