//! Finite-difference gradient checking.
//!
//! Central differences `(f(x+eps e_i) - f(x-eps e_i)) / 2 eps` per coordinate
//! against the tape's analytic gradient. The checked function must be
//! deterministic at `x0`; train-mode dropout is rejected.

use super::{Tape, TapeCfg, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// Flat coordinate of the worst disagreement.
    pub worst_coord: usize,
}

/// Options for a gradient check run.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    pub cfg: TapeCfg,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tolerance: 1e-4,
            cfg: TapeCfg::default(),
        }
    }
}

impl GradCheck {
    pub fn new(step: f64, tolerance: f64) -> Self {
        GradCheck {
            step,
            tolerance,
            ..Default::default()
        }
    }

    pub fn with_cfg(mut self, cfg: TapeCfg) -> Self {
        self.cfg = cfg;
        self
    }

    fn eval<F>(&self, f: &F, x: &Tensor) -> Result<(f64, Tape, Var, Var)>
    where
        F: Fn(&mut Tape, Var) -> Result<Var>,
    {
        let mut tape = Tape::new(self.cfg);
        let v = tape.leaf(x.clone());
        let y = f(&mut tape, v)?;
        if !tape.value(y).is_scalar() {
            return Err(Error::invalid(
                "grad_check",
                format!("function output must be scalar, got {:?}", tape.shape(y)),
            ));
        }
        let out = tape.value(y).item();
        Ok((out, tape, v, y))
    }

    /// Check the analytic gradient of `f` with respect to `x0`.
    pub fn run<F>(&self, f: F, x0: &Tensor) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, Var) -> Result<Var>,
    {
        let x0 = {
            let mut t = x0.clone();
            t.requires_grad = true;
            t.zero_grad();
            t
        };

        let (y0, mut tape, xvar, yvar) = self.eval(&f, &x0)?;
        if tape.used_train_dropout() {
            return Err(Error::NonDeterministic {
                reason: "dropout active".to_string(),
            });
        }
        let (y1, _, _, _) = self.eval(&f, &x0)?;
        if y0.to_bits() != y1.to_bits() {
            return Err(Error::NonDeterministic {
                reason: "two evaluations disagree".to_string(),
            });
        }

        tape.backward(yvar)?;
        let analytic: Vec<f64> = match tape.grad(xvar) {
            Some(g) => g.to_vec(),
            None => vec![0.0; x0.numel()],
        };

        let mut max_rel_err = 0.0;
        let mut worst_coord = 0;
        for i in 0..x0.numel() {
            let mut plus = x0.clone();
            plus.data_mut()[i] += self.step;
            let mut minus = x0.clone();
            minus.data_mut()[i] -= self.step;
            let (yp, _, _, _) = self.eval(&f, &plus)?;
            let (ym, _, _, _) = self.eval(&f, &minus)?;
            let fd = (yp - ym) / (2.0 * self.step);
            let an = analytic[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            let rel = (fd - an).abs() / denom;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_coord = i;
            }
        }
        Ok(GradCheckReport {
            max_rel_err,
            pass: max_rel_err < self.tolerance,
            worst_coord,
        })
    }
}

/// Verify that the checker catches a planted wrong backward rule.
/// Returns the report for the corrupted op; a healthy checker reports
/// `pass == false` here.
pub fn corrupted_rule_selftest() -> Result<GradCheckReport> {
    let x = Tensor::from_vec(vec![0.3, -0.7, 1.1]);
    GradCheck::default().run(
        |tape, v| {
            let t = tape.tanh_corrupted_backward(v)?;
            tape.sum_all(t)
        },
        &x,
    )
}
