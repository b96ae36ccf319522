//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation executed through [`Tape`] records its operands and a
//! backward rule. [`Tape::backward`] replays the records in reverse and
//! accumulates exact gradients for every `requires_grad` leaf reachable from
//! the loss. Repeated backward calls accumulate additively.
//!
//! A tape is confined to one training step on one thread; all operations are
//! pure functions of their inputs plus the tape state, so results are bitwise
//! reproducible for a fixed dropout seed.

pub mod gradcheck;
pub(crate) mod kernels;
mod ops;

#[cfg(test)]
mod tests;

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Forward-pass mode. `Eval` disables dropout and is fully deterministic.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Construction-time tape settings.
#[derive(Clone, Copy, Debug)]
pub struct TapeCfg {
    pub mode: Mode,
    pub precision: Precision,
    /// Base seed for counter-based dropout masks. Combined with the index of
    /// each dropout op so a step replays bitwise identically.
    pub dropout_seed: u64,
}

impl Default for TapeCfg {
    fn default() -> Self {
        TapeCfg {
            mode: Mode::Eval,
            precision: Precision::F64,
            dropout_seed: 0,
        }
    }
}

impl TapeCfg {
    pub fn train(dropout_seed: u64) -> Self {
        TapeCfg {
            mode: Mode::Train,
            precision: Precision::F64,
            dropout_seed,
        }
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(u32);

/// Broadcast pattern for binary elementwise ops. Anything fancier than a
/// scalar over all elements or a vector over rows is rejected.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Bcast {
    Same,
    ScalarRhs,
    RowVecRhs,
}

enum Op {
    Leaf,
    Add { a: u32, b: u32, bcast: Bcast },
    Mul { a: u32, b: u32, bcast: Bcast },
    Scale { a: u32, c: f64 },
    Tanh { a: u32 },
    Gelu { a: u32 },
    Exp { a: u32 },
    Ln { a: u32 },
    Dropout { a: u32, mask: Vec<f64> },
    Matmul { a: u32, b: u32 },
    Bmm { a: u32, b: u32, transpose_b: bool },
    Reshape { a: u32 },
    Transpose { a: u32, perm: Vec<usize> },
    GatherRows { table: u32, ids: Vec<usize> },
    SoftmaxRows { a: u32 },
    MaskedMeanPool { x: u32, mask: Vec<f64>, counts: Vec<f64> },
    CrossEntropy { logits: u32, labels: Vec<usize>, probs: Vec<f64> },
    Cosine { a: u32, b: u32 },
    LayerNorm { x: u32, gain: u32, bias: u32, xhat: Vec<f64>, inv_std: Vec<f64> },
    RowSlice { x: u32, row: usize },
    AddN { parts: Vec<u32> },
    SumAll { a: u32 },
    /// Gradient-checker self-test fixture: tanh forward, corrupted backward.
    TanhBadGrad { a: u32 },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Ordered record of executed operations with their backward rules.
pub struct Tape {
    nodes: Vec<Node>,
    cfg: TapeCfg,
    dropout_count: u64,
    used_train_dropout: bool,
}

impl Tape {
    pub fn new(cfg: TapeCfg) -> Self {
        Tape {
            nodes: Vec::new(),
            cfg,
            dropout_count: 0,
            used_train_dropout: false,
        }
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn precision(&self) -> Precision {
        self.cfg.precision
    }

    /// True once a train-mode dropout with p > 0 has executed.
    pub fn used_train_dropout(&self) -> bool {
        self.used_train_dropout
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Put a tensor on the tape. Gradients flow to it iff `requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires = t.requires_grad;
        self.push(t, requires, Op::Leaf)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.requires_grad = false;
        self.push(t, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0 as usize].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0 as usize].value.shape()
    }

    /// Accumulated gradient of `v`, if any backward pass has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0 as usize].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let idx = self.nodes.len();
        assert!(idx < u32::MAX as usize, "tape overflow");
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(idx as u32)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0 as usize].requires_grad
    }

    /// Finish an op: verify finiteness, apply storage precision, record.
    fn finish(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        mut data: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> Result<Var> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        self.cfg.precision.quantize(&mut data);
        let t = Tensor::new(shape, data).map_err(|_| Error::NonFinite { op: op_name })?;
        Ok(self.push(t, requires_grad, op))
    }

    /// Reverse sweep from a scalar loss. Gradients of `requires_grad` leaves
    /// accumulate additively across repeated calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = loss.0 as usize;
        if !self.nodes[root].value.is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!(
                    "seed must be scalar, got shape {:?}",
                    self.nodes[root].value.shape()
                ),
            ));
        }
        // Fresh workspace per call so repeated backward passes stay additive.
        let mut ws: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        ws[root] = Some(vec![1.0]);

        for idx in (0..=root).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = ws[idx].take() else { continue };
            self.propagate(idx, &g, &mut ws);
            // Re-store so the accumulation step below sees it.
            ws[idx] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(ws) {
            if let (true, Some(g)) = (node.requires_grad, g) {
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn accum(ws: &mut [Option<Vec<f64>>], nodes: &[Node], target: u32, contribution: &[f64]) {
        let t = target as usize;
        if !nodes[t].requires_grad {
            return;
        }
        let slot = ws[t].get_or_insert_with(|| vec![0.0; nodes[t].value.numel()]);
        for (a, b) in slot.iter_mut().zip(contribution) {
            *a += b;
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], ws: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: u32| nodes[v as usize].value.data();
        let shp = |v: u32| nodes[v as usize].value.shape();
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Add { a, b, bcast } => {
                Self::accum(ws, nodes, *a, g);
                match bcast {
                    Bcast::Same => Self::accum(ws, nodes, *b, g),
                    Bcast::ScalarRhs => {
                        let s: f64 = g.iter().sum();
                        Self::accum(ws, nodes, *b, &[s]);
                    }
                    Bcast::RowVecRhs => {
                        let n = shp(*b)[0];
                        let mut gb = vec![0.0; n];
                        for row in g.chunks_exact(n) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        Self::accum(ws, nodes, *b, &gb);
                    }
                }
            }
            Op::Mul { a, b, bcast } => {
                let av = val(*a);
                let bv = val(*b);
                match bcast {
                    Bcast::Same => {
                        let ga: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                        let gb: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                        Self::accum(ws, nodes, *a, &ga);
                        Self::accum(ws, nodes, *b, &gb);
                    }
                    Bcast::ScalarRhs => {
                        let c = bv[0];
                        let ga: Vec<f64> = g.iter().map(|g| g * c).collect();
                        let gb: f64 = g.iter().zip(av).map(|(g, a)| g * a).sum();
                        Self::accum(ws, nodes, *a, &ga);
                        Self::accum(ws, nodes, *b, &[gb]);
                    }
                    Bcast::RowVecRhs => {
                        let n = shp(*b)[0];
                        let mut ga = vec![0.0; g.len()];
                        let mut gb = vec![0.0; n];
                        for (r, row) in g.chunks_exact(n).enumerate() {
                            for j in 0..n {
                                ga[r * n + j] = row[j] * bv[j];
                                gb[j] += row[j] * av[r * n + j];
                            }
                        }
                        Self::accum(ws, nodes, *a, &ga);
                        Self::accum(ws, nodes, *b, &gb);
                    }
                }
            }
            Op::Scale { a, c } => {
                let ga: Vec<f64> = g.iter().map(|g| g * c).collect();
                Self::accum(ws, nodes, *a, &ga);
            }
            Op::Tanh { a } => {
                let y = nodes[idx].value.data();
                let ga: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                Self::accum(ws, nodes, *a, &ga);
            }
            Op::TanhBadGrad { a } => {
                let y = nodes[idx].value.data();
                // Off by a constant on purpose; only grad_check's self-test
                // ever records this op.
                let ga: Vec<f64> = g
                    .iter()
                    .zip(y)
                    .map(|(g, y)| g * (1.0 - y * y) + 0.05)
                    .collect();
                Self::accum(ws, nodes, *a, &ga);
            }
            Op::Gelu { a } => {
                let x = val(*a);
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| g * kernels::gelu_prime(*x))
                    .collect();
                Self::accum(ws, nodes, *a, &ga);
            }
            Op::Exp { a } => {
                let y = nodes[idx].value.data();
                let ga: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y).collect();
                Self::accum(ws, nodes, *a, &ga);
            }
            Op::Ln { a } => {
                let x = val(*a);
                let ga: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
                Self::accum(ws, nodes, *a, &ga);
            }
            Op::Dropout { a, mask } => {
                let ga: Vec<f64> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                Self::accum(ws, nodes, *a, &ga);
            }
            Op::Matmul { a, b } => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[1];
                let ga = kernels::mm_nt(g, val(*b), m, n, k);
                let gb = kernels::mm_tn(val(*a), g, k, m, n);
                Self::accum(ws, nodes, *a, &ga);
                Self::accum(ws, nodes, *b, &gb);
            }
            Op::Bmm { a, b, transpose_b } => {
                let sa = shp(*a);
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                let av = val(*a);
                let bv = val(*b);
                let n = if *transpose_b { shp(*b)[1] } else { shp(*b)[2] };
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for bi in 0..bs {
                    let gslice = &g[bi * m * n..(bi + 1) * m * n];
                    let aslice = &av[bi * m * k..(bi + 1) * m * k];
                    let bslice = &bv[bi * n * k..(bi + 1) * n * k];
                    if *transpose_b {
                        // y = a . b^T, b is [n,k]
                        let gai = kernels::mm_nn(gslice, bslice, m, n, k);
                        let gbi = kernels::mm_tn(gslice, aslice, n, m, k);
                        ga[bi * m * k..(bi + 1) * m * k].copy_from_slice(&gai);
                        gb[bi * n * k..(bi + 1) * n * k].copy_from_slice(&gbi);
                    } else {
                        // y = a . b, b is [k,n]
                        let gai = kernels::mm_nt(gslice, bslice, m, n, k);
                        let gbi = kernels::mm_tn(aslice, gslice, k, m, n);
                        ga[bi * m * k..(bi + 1) * m * k].copy_from_slice(&gai);
                        gb[bi * k * n..(bi + 1) * k * n].copy_from_slice(&gbi);
                    }
                }
                Self::accum(ws, nodes, *a, &ga);
                Self::accum(ws, nodes, *b, &gb);
            }
            Op::Reshape { a } => {
                Self::accum(ws, nodes, *a, g);
            }
            Op::Transpose { a, perm } => {
                // Route gradient back through the inverse permutation.
                let in_shape = shp(*a);
                let out_shape = nodes[idx].value.shape();
                let ga = transpose_nd(g, out_shape, &inverse_perm(perm));
                debug_assert_eq!(ga.len(), in_shape.iter().product::<usize>());
                Self::accum(ws, nodes, *a, &ga);
            }
            Op::GatherRows { table, ids } => {
                let width = shp(*table)[1];
                let mut gt = vec![0.0; val(*table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    let src = &g[r * width..(r + 1) * width];
                    let dst = &mut gt[id * width..(id + 1) * width];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                Self::accum(ws, nodes, *table, &gt);
            }
            Op::SoftmaxRows { a } => {
                let y = nodes[idx].value.data();
                let n = *nodes[idx].value.shape().last().unwrap();
                let mut ga = vec![0.0; y.len()];
                for ((yr, gr), out) in y
                    .chunks_exact(n)
                    .zip(g.chunks_exact(n))
                    .zip(ga.chunks_exact_mut(n))
                {
                    let s: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for j in 0..n {
                        out[j] = yr[j] * (gr[j] - s);
                    }
                }
                Self::accum(ws, nodes, *a, &ga);
            }
            Op::MaskedMeanPool { x, mask, counts } => {
                let sx = shp(*x);
                let (n, t, h) = (sx[0], sx[1], sx[2]);
                let mut gx = vec![0.0; n * t * h];
                for i in 0..n {
                    let grow = &g[i * h..(i + 1) * h];
                    for j in 0..t {
                        let m = mask[i * t + j];
                        if m == 0.0 {
                            continue;
                        }
                        let dst = &mut gx[(i * t + j) * h..(i * t + j + 1) * h];
                        let w = m / counts[i];
                        for (d, s) in dst.iter_mut().zip(grow) {
                            *d += w * s;
                        }
                    }
                }
                Self::accum(ws, nodes, *x, &gx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let m = shp(*logits)[1];
                let n = labels.len();
                let scale = g[0] / n as f64;
                let mut gl = probs.clone();
                for (i, &lab) in labels.iter().enumerate() {
                    gl[i * m + lab] -= 1.0;
                }
                for v in gl.iter_mut() {
                    *v *= scale;
                }
                Self::accum(ws, nodes, *logits, &gl);
            }
            Op::Cosine { a, b } => {
                let av = val(*a);
                let bv = val(*b);
                let na = kernels::l2_norm(av);
                let nb = kernels::l2_norm(bv);
                let sim = nodes[idx].value.item();
                let gs = g[0];
                let ga: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(a, b)| gs * (b / (na * nb) - sim * a / (na * na)))
                    .collect();
                let gb: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(a, b)| gs * (a / (na * nb) - sim * b / (nb * nb)))
                    .collect();
                Self::accum(ws, nodes, *a, &ga);
                Self::accum(ws, nodes, *b, &gb);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let h = shp(*gain)[0];
                let gainv = val(*gain);
                let rows = xhat.len() / h;
                let mut gx = vec![0.0; xhat.len()];
                let mut ggain = vec![0.0; h];
                let mut gbias = vec![0.0; h];
                for r in 0..rows {
                    let gr = &g[r * h..(r + 1) * h];
                    let xh = &xhat[r * h..(r + 1) * h];
                    let inv = inv_std[r];
                    let mut mean_gh = 0.0;
                    let mut mean_ghx = 0.0;
                    for j in 0..h {
                        let gh = gr[j] * gainv[j];
                        mean_gh += gh;
                        mean_ghx += gh * xh[j];
                        ggain[j] += gr[j] * xh[j];
                        gbias[j] += gr[j];
                    }
                    mean_gh /= h as f64;
                    mean_ghx /= h as f64;
                    let out = &mut gx[r * h..(r + 1) * h];
                    for j in 0..h {
                        let gh = gr[j] * gainv[j];
                        out[j] = inv * (gh - mean_gh - xh[j] * mean_ghx);
                    }
                }
                Self::accum(ws, nodes, *x, &gx);
                Self::accum(ws, nodes, *gain, &ggain);
                Self::accum(ws, nodes, *bias, &gbias);
            }
            Op::RowSlice { x, row } => {
                let w = shp(*x)[1];
                let mut gx = vec![0.0; val(*x).len()];
                gx[row * w..(row + 1) * w].copy_from_slice(g);
                Self::accum(ws, nodes, *x, &gx);
            }
            Op::AddN { parts } => {
                for p in parts {
                    Self::accum(ws, nodes, *p, g);
                }
            }
            Op::SumAll { a } => {
                let ga = vec![g[0]; val(*a).len()];
                Self::accum(ws, nodes, *a, &ga);
            }
        }
    }
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// General n-d transpose used by forward and backward paths.
pub(crate) fn transpose_nd(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let ndim = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; ndim];
    for d in (0..ndim.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let mut out = vec![0.0; data.len()];
    let mut coords = vec![0usize; ndim];
    for (fi, slot) in out.iter_mut().enumerate() {
        // coords are the output-space coordinates of flat index fi
        let mut rem = fi;
        for d in (0..ndim).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0;
        for d in 0..ndim {
            src += coords[d] * in_strides[perm[d]];
        }
        *slot = data[src];
    }
    out
}
