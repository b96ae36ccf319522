//! Forward execution and recording of tape operations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{kernels, transpose_nd, Bcast, Mode, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::mix_seeds;

impl Tape {
    fn bcast_of(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            Ok(Bcast::Same)
        } else if sb == [1] {
            Ok(Bcast::ScalarRhs)
        } else if sb.len() == 1 && sa.last() == Some(&sb[0]) {
            Ok(Bcast::RowVecRhs)
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    /// Elementwise sum; `b` may be a scalar or a last-axis vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.bcast_of("add", a, b)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let n = *self.shape(a).last().unwrap();
        let data: Vec<f64> = match bcast {
            Bcast::Same => av.iter().zip(bv).map(|(x, y)| x + y).collect(),
            Bcast::ScalarRhs => av.iter().map(|x| x + bv[0]).collect(),
            Bcast::RowVecRhs => av
                .iter()
                .enumerate()
                .map(|(i, x)| x + bv[i % n])
                .collect(),
        };
        let req = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        self.finish(
            "add",
            shape,
            data,
            req,
            Op::Add {
                a: a.0,
                b: b.0,
                bcast,
            },
        )
    }

    /// Elementwise product; `b` may be a scalar or a last-axis vector.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.bcast_of("mul", a, b)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let n = *self.shape(a).last().unwrap();
        let data: Vec<f64> = match bcast {
            Bcast::Same => av.iter().zip(bv).map(|(x, y)| x * y).collect(),
            Bcast::ScalarRhs => av.iter().map(|x| x * bv[0]).collect(),
            Bcast::RowVecRhs => av
                .iter()
                .enumerate()
                .map(|(i, x)| x * bv[i % n])
                .collect(),
        };
        let req = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        self.finish(
            "mul",
            shape,
            data,
            req,
            Op::Mul {
                a: a.0,
                b: b.0,
                bcast,
            },
        )
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.finish("scale", shape, data, req, Op::Scale { a: a.0, c })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.finish("tanh", shape, data, req, Op::Tanh { a: a.0 })
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| kernels::gelu(x))
            .collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.finish("gelu", shape, data, req, Op::Gelu { a: a.0 })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.exp()).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.finish("exp", shape, data, req, Op::Exp { a: a.0 })
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.ln()).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.finish("ln", shape, data, req, Op::Ln { a: a.0 })
    }

    /// Inverted dropout, deterministic per (tape seed, op index). Identity in
    /// eval mode or at p = 0; scaled by 1/(1-p) when active.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p = {p} out of [0, 1)")));
        }
        if self.cfg.mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        self.used_train_dropout = true;
        let seed = mix_seeds(self.cfg.dropout_seed, self.dropout_count);
        self.dropout_count += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.finish("dropout", shape, data, req, Op::Dropout { a: a.0, mask })
    }

    /// 2-D matrix product `a[m,k] . b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::mm_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let req = self.requires(a) || self.requires(b);
        self.finish(
            "matmul",
            vec![m, n],
            data,
            req,
            Op::Matmul { a: a.0, b: b.0 },
        )
    }

    /// Batched matmul over a shared leading dimension. With `transpose_b`,
    /// `b` is `[B,n,k]` and the product is `a . b^T`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            };
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "bmm",
                lhs: sa,
                rhs: sb,
            });
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut data = vec![0.0; bs * m * n];
        for bi in 0..bs {
            let aslice = &av[bi * m * k..(bi + 1) * m * k];
            let bslice = &bv[bi * sb[1] * sb[2]..(bi + 1) * sb[1] * sb[2]];
            let out = if transpose_b {
                kernels::mm_nt(aslice, bslice, m, k, n)
            } else {
                kernels::mm_nn(aslice, bslice, m, k, n)
            };
            data[bi * m * n..(bi + 1) * m * n].copy_from_slice(&out);
        }
        let req = self.requires(a) || self.requires(b);
        self.finish(
            "bmm",
            vec![bs, m, n],
            data,
            req,
            Op::Bmm {
                a: a.0,
                b: b.0,
                transpose_b,
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let data = self.value(a).data().to_vec();
        let req = self.requires(a);
        self.finish("reshape", shape, data, req, Op::Reshape { a: a.0 })
    }

    pub fn transpose(&mut self, a: Var, perm: Vec<usize>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || {
            for &p in &perm {
                if p >= shape.len() || seen[p] {
                    seen = vec![];
                    break;
                }
                seen[p] = true;
            }
            seen.is_empty()
        } {
            return Err(Error::invalid(
                "transpose",
                format!("perm {:?} is not a permutation of axes of {:?}", perm, shape),
            ));
        }
        let data = transpose_nd(self.value(a).data(), &shape, &perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let req = self.requires(a);
        self.finish(
            "transpose",
            out_shape,
            data,
            req,
            Op::Transpose { a: a.0, perm },
        )
    }

    /// Row lookup into a 2-D table; backward scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::invalid("gather_rows", "table must be 2-D"));
        }
        let (rows, width) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::invalid(
                "gather_rows",
                format!("id {bad} out of range for table with {rows} rows"),
            ));
        }
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            data.extend_from_slice(&tv[id * width..(id + 1) * width]);
        }
        let req = self.requires(table);
        self.finish(
            "gather_rows",
            vec![ids.len(), width],
            data,
            req,
            Op::GatherRows {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    /// Softmax over the last axis with row-max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| Error::invalid("softmax_rows", "0-d input"))?;
        let data = kernels::softmax_rows(self.value(a).data(), n);
        let req = self.requires(a);
        self.finish("softmax_rows", shape, data, req, Op::SoftmaxRows { a: a.0 })
    }

    /// Per-sample average of unmasked token vectors.
    /// `x` is `[N,T,h]`, `mask` is `{0,1}` of length `N*T`.
    pub fn masked_mean_pool(&mut self, x: Var, mask: &[f64]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::invalid("masked_mean_pool", "input must be [N,T,h]"));
        }
        let (n, t, h) = (sx[0], sx[1], sx[2]);
        if mask.len() != n * t {
            return Err(Error::ShapeMismatch {
                op: "masked_mean_pool",
                lhs: sx,
                rhs: vec![mask.len()],
            });
        }
        let mut counts = vec![0.0; n];
        for i in 0..n {
            counts[i] = mask[i * t..(i + 1) * t].iter().sum();
            if counts[i] == 0.0 {
                return Err(Error::EmptyMaskRow { row: i });
            }
        }
        let xv = self.value(x).data();
        let mut data = vec![0.0; n * h];
        for i in 0..n {
            let out = &mut data[i * h..(i + 1) * h];
            for j in 0..t {
                if mask[i * t + j] == 0.0 {
                    continue;
                }
                let src = &xv[(i * t + j) * h..(i * t + j + 1) * h];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += s;
                }
            }
            for o in out.iter_mut() {
                *o /= counts[i];
            }
        }
        let req = self.requires(x);
        self.finish(
            "masked_mean_pool",
            vec![n, h],
            data,
            req,
            Op::MaskedMeanPool {
                x: x.0,
                mask: mask.to_vec(),
                counts,
            },
        )
    }

    /// Mean over the batch of -log softmax(logits)[label].
    pub fn cross_entropy_from_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: sl,
                rhs: vec![labels.len()],
            });
        }
        let m = sl[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::invalid(
                "cross_entropy",
                format!("label {bad} out of range for {m} classes"),
            ));
        }
        let lv = self.value(logits).data();
        let probs = kernels::softmax_rows(lv, m);
        let mut loss = 0.0;
        for (i, &lab) in labels.iter().enumerate() {
            let row = &lv[i * m..(i + 1) * m];
            loss += kernels::logsumexp(row) - row[lab];
        }
        loss /= labels.len() as f64;
        let req = self.requires(logits);
        self.finish(
            "cross_entropy",
            vec![1],
            vec![loss],
            req,
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Cosine similarity of two vectors, in [-1, 1].
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 1 || sa != sb {
            return Err(Error::ShapeMismatch {
                op: "cosine_similarity",
                lhs: sa,
                rhs: sb,
            });
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let na = kernels::l2_norm(av);
        let nb = kernels::l2_norm(bv);
        if na == 0.0 || nb == 0.0 {
            return Err(Error::ZeroNorm {
                op: "cosine_similarity",
            });
        }
        let sim = kernels::dot(av, bv) / (na * nb);
        // Clamp roundoff spill past the mathematical range.
        let sim = sim.clamp(-1.0, 1.0);
        let req = self.requires(a) || self.requires(b);
        self.finish(
            "cosine_similarity",
            vec![1],
            vec![sim],
            req,
            Op::Cosine { a: a.0, b: b.0 },
        )
    }

    /// Last-axis standardization (population variance) then affine transform.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let h = *sx.last().unwrap();
        if h < 2 {
            return Err(Error::invalid("layer_norm", "last extent must be >= 2"));
        }
        if self.shape(gain) != [h] || self.shape(bias) != [h] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: sx,
                rhs: self.shape(gain).to_vec(),
            });
        }
        let xv = self.value(x).data();
        let gv = self.value(gain).data().to_vec();
        let bv = self.value(bias).data().to_vec();
        let rows = xv.len() / h;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; xv.len()];
        for r in 0..rows {
            let xr = &xv[r * h..(r + 1) * h];
            let mean = xr.iter().sum::<f64>() / h as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..h {
                let xh = (xr[j] - mean) * inv;
                xhat[r * h + j] = xh;
                data[r * h + j] = gv[j] * xh + bv[j];
            }
        }
        let req = self.requires(x) || self.requires(gain) || self.requires(bias);
        self.finish(
            "layer_norm",
            sx,
            data,
            req,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
        )
    }

    /// Row `i` of a 2-D tensor as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || i >= sx[0] {
            return Err(Error::invalid(
                "row",
                format!("row {i} of shape {:?}", sx),
            ));
        }
        let w = sx[1];
        let data = self.value(x).data()[i * w..(i + 1) * w].to_vec();
        let req = self.requires(x);
        self.finish("row", vec![w], data, req, Op::RowSlice { x: x.0, row: i })
    }

    /// Sum of same-shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("add_n", "empty operand list"));
        };
        let shape = self.shape(first).to_vec();
        for &p in parts {
            if self.shape(p) != shape {
                return Err(Error::ShapeMismatch {
                    op: "add_n",
                    lhs: shape,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let mut data = vec![0.0; self.value(first).numel()];
        for &p in parts {
            for (d, s) in data.iter_mut().zip(self.value(p).data()) {
                *d += s;
            }
        }
        let req = parts.iter().any(|&p| self.requires(p));
        self.finish(
            "add_n",
            shape,
            data,
            req,
            Op::AddN {
                parts: parts.iter().map(|p| p.0).collect(),
            },
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let req = self.requires(a);
        self.finish("sum_all", vec![1], vec![s], req, Op::SumAll { a: a.0 })
    }

    /// Self-test fixture: tanh with a deliberately wrong backward rule.
    pub(crate) fn tanh_corrupted_backward(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let req = self.requires(a);
        let shape = self.shape(a).to_vec();
        self.finish("tanh_bad", shape, data, req, Op::TanhBadGrad { a: a.0 })
    }
}
