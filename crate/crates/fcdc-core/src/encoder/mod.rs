//! A small pre-norm transformer encoder with a configurable shallow tap
//! layer. One forward pass yields shallow features (pooled tap-layer states)
//! and deep features (pooled final states), plus coarse logits from a tanh
//! head on each. A momentum twin, updated by exponential moving average,
//! produces the queue entries and never receives gradients.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Mode, Tape, TapeCfg, Var};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Total transformer blocks; at least 2 so a strict tap exists.
    pub num_layers: usize,
    /// Shallow tap layer L, 1 <= L < num_layers.
    pub tap_layer: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_p: f64,
    pub num_coarse_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        // Desk-scale geometry: the tap sits at half depth and stays a knob.
        EncoderConfig {
            vocab_size: 1024,
            max_seq_len: 32,
            num_layers: 4,
            tap_layer: 2,
            hidden_dim: 64,
            num_heads: 4,
            ffn_dim: 128,
            dropout_p: 0.1,
            num_coarse_classes: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.num_layers < 2 {
            return err(format!("num_layers must be >= 2, got {}", self.num_layers));
        }
        if self.tap_layer == 0 || self.tap_layer >= self.num_layers {
            return err(format!(
                "tap_layer must satisfy 1 <= L < num_layers, got {} of {}",
                self.tap_layer, self.num_layers
            ));
        }
        if self.hidden_dim == 0 || self.hidden_dim % self.num_heads != 0 {
            return err(format!(
                "hidden_dim {} must be divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.vocab_size < 2 || self.max_seq_len == 0 || self.ffn_dim == 0 {
            return err("vocab_size, max_seq_len and ffn_dim must be positive".to_string());
        }
        if self.num_coarse_classes < 2 {
            return err("need at least 2 coarse classes".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return err(format!("dropout_p {} out of [0, 1)", self.dropout_p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// All learnable state of the encoder, including both classifier heads.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_ln_gain: Tensor,
    pub final_ln_bias: Tensor,
    pub tap_head: HeadParams,
    pub out_head: HeadParams,
}

impl EncoderParams {
    /// Named parameter tensors in a fixed, stable order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("token_emb".to_string(), &self.token_emb));
        out.push(("pos_emb".to_string(), &self.pos_emb));
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.attn.wq"), &layer.wq));
            out.push((format!("layer{i}.attn.bq"), &layer.bq));
            out.push((format!("layer{i}.attn.wk"), &layer.wk));
            out.push((format!("layer{i}.attn.bk"), &layer.bk));
            out.push((format!("layer{i}.attn.wv"), &layer.wv));
            out.push((format!("layer{i}.attn.bv"), &layer.bv));
            out.push((format!("layer{i}.attn.wo"), &layer.wo));
            out.push((format!("layer{i}.attn.bo"), &layer.bo));
            out.push((format!("layer{i}.ln1.gain"), &layer.ln1_gain));
            out.push((format!("layer{i}.ln1.bias"), &layer.ln1_bias));
            out.push((format!("layer{i}.ffn.w1"), &layer.w1));
            out.push((format!("layer{i}.ffn.b1"), &layer.b1));
            out.push((format!("layer{i}.ffn.w2"), &layer.w2));
            out.push((format!("layer{i}.ffn.b2"), &layer.b2));
            out.push((format!("layer{i}.ln2.gain"), &layer.ln2_gain));
            out.push((format!("layer{i}.ln2.bias"), &layer.ln2_bias));
        }
        out.push(("final_ln.gain".to_string(), &self.final_ln_gain));
        out.push(("final_ln.bias".to_string(), &self.final_ln_bias));
        out.push(("tap_head.w".to_string(), &self.tap_head.w));
        out.push(("tap_head.b".to_string(), &self.tap_head.b));
        out.push(("out_head.w".to_string(), &self.out_head.w));
        out.push(("out_head.b".to_string(), &self.out_head.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("token_emb".to_string(), &mut self.token_emb));
        out.push(("pos_emb".to_string(), &mut self.pos_emb));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.attn.wq"), &mut layer.wq));
            out.push((format!("layer{i}.attn.bq"), &mut layer.bq));
            out.push((format!("layer{i}.attn.wk"), &mut layer.wk));
            out.push((format!("layer{i}.attn.bk"), &mut layer.bk));
            out.push((format!("layer{i}.attn.wv"), &mut layer.wv));
            out.push((format!("layer{i}.attn.bv"), &mut layer.bv));
            out.push((format!("layer{i}.attn.wo"), &mut layer.wo));
            out.push((format!("layer{i}.attn.bo"), &mut layer.bo));
            out.push((format!("layer{i}.ln1.gain"), &mut layer.ln1_gain));
            out.push((format!("layer{i}.ln1.bias"), &mut layer.ln1_bias));
            out.push((format!("layer{i}.ffn.w1"), &mut layer.w1));
            out.push((format!("layer{i}.ffn.b1"), &mut layer.b1));
            out.push((format!("layer{i}.ffn.w2"), &mut layer.w2));
            out.push((format!("layer{i}.ffn.b2"), &mut layer.b2));
            out.push((format!("layer{i}.ln2.gain"), &mut layer.ln2_gain));
            out.push((format!("layer{i}.ln2.bias"), &mut layer.ln2_bias));
        }
        out.push(("final_ln.gain".to_string(), &mut self.final_ln_gain));
        out.push(("final_ln.bias".to_string(), &mut self.final_ln_bias));
        out.push(("tap_head.w".to_string(), &mut self.tap_head.w));
        out.push(("tap_head.b".to_string(), &mut self.tap_head.b));
        out.push(("out_head.w".to_string(), &mut self.out_head.w));
        out.push(("out_head.b".to_string(), &mut self.out_head.b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Structural compatibility: same tensor names and shapes.
    pub fn structurally_matches(&self, other: &EncoderParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }
}

fn xavier(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    let mut t = Tensor::new(shape, data).expect("xavier init");
    t.requires_grad = true;
    t
}

fn zeros_grad(shape: Vec<usize>) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.requires_grad = true;
    t
}

fn ones_grad(shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let mut t = Tensor::new(shape, vec![1.0; n]).unwrap();
    t.requires_grad = true;
    t
}

/// Seeded initialization: scaled-uniform weights, layer-norm gains 1,
/// biases 0. Same seed, same bits.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    let ffn = config.ffn_dim;
    let m = config.num_coarse_classes;

    let token_emb = xavier(&mut rng, vec![config.vocab_size, h], config.vocab_size, h);
    let pos_emb = xavier(&mut rng, vec![config.max_seq_len, h], config.max_seq_len, h);
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        layers.push(LayerParams {
            wq: xavier(&mut rng, vec![h, h], h, h),
            bq: zeros_grad(vec![h]),
            wk: xavier(&mut rng, vec![h, h], h, h),
            bk: zeros_grad(vec![h]),
            wv: xavier(&mut rng, vec![h, h], h, h),
            bv: zeros_grad(vec![h]),
            wo: xavier(&mut rng, vec![h, h], h, h),
            bo: zeros_grad(vec![h]),
            ln1_gain: ones_grad(vec![h]),
            ln1_bias: zeros_grad(vec![h]),
            w1: xavier(&mut rng, vec![h, ffn], h, ffn),
            b1: zeros_grad(vec![ffn]),
            w2: xavier(&mut rng, vec![ffn, h], ffn, h),
            b2: zeros_grad(vec![h]),
            ln2_gain: ones_grad(vec![h]),
            ln2_bias: zeros_grad(vec![h]),
        });
    }
    Ok(EncoderParams {
        config: config.clone(),
        token_emb,
        pos_emb,
        layers,
        final_ln_gain: ones_grad(vec![h]),
        final_ln_bias: zeros_grad(vec![h]),
        tap_head: HeadParams {
            w: xavier(&mut rng, vec![h, m], h, m),
            b: zeros_grad(vec![m]),
        },
        out_head: HeadParams {
            w: xavier(&mut rng, vec![h, m], h, m),
            b: zeros_grad(vec![m]),
        },
    })
}

/// EMA update: every momentum parameter moves to m*theta_m + (1-m)*theta.
pub fn momentum_update(
    params: &EncoderParams,
    momentum_params: &mut EncoderParams,
    m: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::invalid("momentum_update", "factor must be in [0, 1]"));
    }
    if !params.structurally_matches(momentum_params) {
        return Err(Error::StructuralMismatch {
            op: "momentum_update",
            msg: "parameter sets differ in layout".to_string(),
        });
    }
    let live = params.tensors();
    for ((_, target), (_, source)) in momentum_params.tensors_mut().into_iter().zip(live) {
        for (t, s) in target.data_mut().iter_mut().zip(source.data()) {
            *t = m * *t + (1.0 - m) * s;
        }
    }
    Ok(())
}

/// Tape handles for one bound parameter set.
pub struct BoundEncoder {
    pub token_emb: Var,
    pub pos_emb: Var,
    pub layers: Vec<BoundLayer>,
    pub final_ln: (Var, Var),
    pub tap_head: (Var, Var),
    pub out_head: (Var, Var),
    vars_in_order: Vec<Var>,
}

pub struct BoundLayer {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1: (Var, Var),
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub ln2: (Var, Var),
}

impl BoundEncoder {
    /// Vars in `EncoderParams::tensors()` order.
    pub fn vars(&self) -> &[Var] {
        &self.vars_in_order
    }
}

/// Put every parameter on the tape. With `trainable`, gradients will flow
/// to them; otherwise they are constants (the momentum twin's binding).
pub fn bind(tape: &mut Tape, params: &EncoderParams, trainable: bool) -> BoundEncoder {
    bind_impl(tape, params, trainable, None)
}

/// Bind all parameters as constants except the tensor at `replace.0` (in
/// `tensors()` order), which is substituted by an existing tape var — the
/// hook the gradient checker uses to differentiate through one parameter.
pub fn bind_with_replacement(
    tape: &mut Tape,
    params: &EncoderParams,
    replace: (usize, Var),
) -> BoundEncoder {
    bind_impl(tape, params, false, Some(replace))
}

fn bind_impl(
    tape: &mut Tape,
    params: &EncoderParams,
    trainable: bool,
    replace: Option<(usize, Var)>,
) -> BoundEncoder {
    let mut vars_in_order = Vec::new();
    let mut slot = 0usize;
    let mut put = |tape: &mut Tape, t: &Tensor| -> Var {
        let v = match replace {
            Some((idx, var)) if idx == slot => var,
            _ => {
                let mut c = t.clone();
                c.requires_grad = trainable;
                c.zero_grad();
                tape.leaf(c)
            }
        };
        slot += 1;
        vars_in_order.push(v);
        v
    };
    let token_emb = put(tape, &params.token_emb);
    let pos_emb = put(tape, &params.pos_emb);
    let mut layers = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        layers.push(BoundLayer {
            wq: put(tape, &l.wq),
            bq: put(tape, &l.bq),
            wk: put(tape, &l.wk),
            bk: put(tape, &l.bk),
            wv: put(tape, &l.wv),
            bv: put(tape, &l.bv),
            wo: put(tape, &l.wo),
            bo: put(tape, &l.bo),
            ln1: (put(tape, &l.ln1_gain), put(tape, &l.ln1_bias)),
            ffn_w1: put(tape, &l.w1),
            ffn_b1: put(tape, &l.b1),
            ffn_w2: put(tape, &l.w2),
            ffn_b2: put(tape, &l.b2),
            ln2: (put(tape, &l.ln2_gain), put(tape, &l.ln2_bias)),
        });
    }
    let final_ln = (
        put(tape, &params.final_ln_gain),
        put(tape, &params.final_ln_bias),
    );
    let tap_head = (put(tape, &params.tap_head.w), put(tape, &params.tap_head.b));
    let out_head = (put(tape, &params.out_head.w), put(tape, &params.out_head.b));
    BoundEncoder {
        token_emb,
        pos_emb,
        layers,
        final_ln,
        tap_head,
        out_head,
        vars_in_order,
    }
}

/// Pooled features and logits for one batch, as tape handles.
pub struct FeatureVars {
    pub shallow: Var,
    pub deep: Var,
    pub tap_logits: Var,
    pub out_logits: Var,
}

/// Pooled features and logits as plain tensors.
#[derive(Debug, Clone)]
pub struct BatchFeatures {
    pub shallow: Tensor,
    pub deep: Tensor,
    pub tap_logits: Tensor,
    pub out_logits: Tensor,
}

/// `z = tanh(features . W + b)` — the coarse classifier head.
pub fn coarse_logits_vars(tape: &mut Tape, head: (Var, Var), features: Var) -> Result<Var> {
    let z = tape.matmul(features, head.0)?;
    let z = tape.add(z, head.1)?;
    tape.tanh(z)
}

fn validate_batch(
    cfg: &EncoderConfig,
    tokens: &[u32],
    mask: &[f64],
    n: usize,
    t: usize,
) -> Result<()> {
    if n == 0 || t == 0 || tokens.len() != n * t || mask.len() != n * t {
        return Err(Error::invalid(
            "encode",
            format!(
                "batch of {n}x{t} needs {} tokens and mask entries, got {} / {}",
                n * t,
                tokens.len(),
                mask.len()
            ),
        ));
    }
    if t > cfg.max_seq_len {
        return Err(Error::invalid(
            "encode",
            format!("sequence length {t} exceeds max_seq_len {}", cfg.max_seq_len),
        ));
    }
    if let Some(&bad) = tokens.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::invalid(
            "encode",
            format!("token id {bad} out of range for vocab {}", cfg.vocab_size),
        ));
    }
    Ok(())
}

/// Run blocks 1..=`upto`, also returning the states after `capture` blocks.
/// Both returned values are `[n*t, h]` token states.
fn run_blocks(
    tape: &mut Tape,
    enc: &BoundEncoder,
    cfg: &EncoderConfig,
    tokens: &[u32],
    mask: &[f64],
    n: usize,
    t: usize,
    upto: usize,
    capture: usize,
) -> Result<(Var, Var)> {
    let h = cfg.hidden_dim;
    let heads = cfg.num_heads;
    let d = h / heads;
    let p = cfg.dropout_p;
    let eps = tape.precision().layer_norm_eps();

    let ids: Vec<usize> = tokens.iter().map(|&x| x as usize).collect();
    let emb = tape.gather_rows(enc.token_emb, &ids)?;
    let pos_ids: Vec<usize> = (0..n).flat_map(|_| 0..t).collect();
    let pos = tape.gather_rows(enc.pos_emb, &pos_ids)?;
    let mut x = tape.add(emb, pos)?;
    x = tape.dropout(x, p)?;

    // Additive key mask shared by all layers: 0 on real tokens, -1e30 on pads.
    let mut bias = vec![0.0; n * heads * t * t];
    for i in 0..n {
        for hd in 0..heads {
            for q in 0..t {
                for k in 0..t {
                    if mask[i * t + k] == 0.0 {
                        bias[((i * heads + hd) * t + q) * t + k] = -1e30;
                    }
                }
            }
        }
    }
    let key_bias = tape.constant(Tensor::new(vec![n * heads, t, t], bias).unwrap());

    let split_heads = |tape: &mut Tape, v: Var| -> Result<Var> {
        let r = tape.reshape(v, vec![n, t, heads, d])?;
        let p = tape.transpose(r, vec![0, 2, 1, 3])?;
        tape.reshape(p, vec![n * heads, t, d])
    };

    let mut captured = None;
    for (li, layer) in enc.layers.iter().take(upto).enumerate() {
        // Attention sublayer (pre-norm).
        let ln1 = tape.layer_norm(x, layer.ln1.0, layer.ln1.1, eps)?;
        let q = tape.matmul(ln1, layer.wq)?;
        let q = tape.add(q, layer.bq)?;
        let k = tape.matmul(ln1, layer.wk)?;
        let k = tape.add(k, layer.bk)?;
        let v = tape.matmul(ln1, layer.wv)?;
        let v = tape.add(v, layer.bv)?;
        let qh = split_heads(tape, q)?;
        let kh = split_heads(tape, k)?;
        let vh = split_heads(tape, v)?;
        let scores = tape.bmm(qh, kh, true)?;
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
        let scores = tape.add(scores, key_bias)?;
        let probs = tape.softmax_rows(scores)?;
        let probs = tape.dropout(probs, p)?;
        let ctx = tape.bmm(probs, vh, false)?;
        let ctx = tape.reshape(ctx, vec![n, heads, t, d])?;
        let ctx = tape.transpose(ctx, vec![0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, vec![n * t, h])?;
        let attn = tape.matmul(ctx, layer.wo)?;
        let attn = tape.add(attn, layer.bo)?;
        let attn = tape.dropout(attn, p)?;
        x = tape.add(x, attn)?;

        // Feed-forward sublayer.
        let ln2 = tape.layer_norm(x, layer.ln2.0, layer.ln2.1, eps)?;
        let f1 = tape.matmul(ln2, layer.ffn_w1)?;
        let f1 = tape.add(f1, layer.ffn_b1)?;
        let f1 = tape.gelu(f1)?;
        let f2 = tape.matmul(f1, layer.ffn_w2)?;
        let f2 = tape.add(f2, layer.ffn_b2)?;
        let f2 = tape.dropout(f2, p)?;
        x = tape.add(x, f2)?;

        if li + 1 == capture {
            captured = Some(x);
        }
    }
    let captured = captured.ok_or_else(|| Error::invalid("encode", "capture layer not reached"))?;
    Ok((x, captured))
}

/// Full forward pass on an existing tape: shallow/deep pooled features and
/// both heads' logits.
pub fn encode_vars(
    tape: &mut Tape,
    enc: &BoundEncoder,
    cfg: &EncoderConfig,
    tokens: &[u32],
    mask: &[f64],
    n: usize,
    t: usize,
) -> Result<FeatureVars> {
    validate_batch(cfg, tokens, mask, n, t)?;
    let eps = tape.precision().layer_norm_eps();
    let h = cfg.hidden_dim;
    let (x_final, x_tap) = run_blocks(
        tape,
        enc,
        cfg,
        tokens,
        mask,
        n,
        t,
        cfg.num_layers,
        cfg.tap_layer,
    )?;
    let final_norm = tape.layer_norm(x_final, enc.final_ln.0, enc.final_ln.1, eps)?;
    let tap3 = tape.reshape(x_tap, vec![n, t, h])?;
    let fin3 = tape.reshape(final_norm, vec![n, t, h])?;
    let shallow = tape.masked_mean_pool(tap3, mask)?;
    let deep = tape.masked_mean_pool(fin3, mask)?;
    let tap_logits = coarse_logits_vars(tape, enc.tap_head, shallow)?;
    let out_logits = coarse_logits_vars(tape, enc.out_head, deep)?;
    Ok(FeatureVars {
        shallow,
        deep,
        tap_logits,
        out_logits,
    })
}

/// Pooled states after the first `upto` blocks — the truncated forward pass
/// used to cross-check tap consistency.
pub fn encode_prefix(
    params: &EncoderParams,
    tokens: &[u32],
    mask: &[f64],
    n: usize,
    t: usize,
    upto: usize,
) -> Result<Tensor> {
    let cfg = &params.config;
    validate_batch(cfg, tokens, mask, n, t)?;
    let mut tape = Tape::new(TapeCfg::default());
    let enc = bind(&mut tape, params, false);
    let (_, captured) = run_blocks(&mut tape, &enc, cfg, tokens, mask, n, t, upto, upto)?;
    let c3 = tape.reshape(captured, vec![n, t, cfg.hidden_dim])?;
    let pooled = tape.masked_mean_pool(c3, mask)?;
    Ok(tape.value(pooled).clone())
}

/// Convenience forward pass on a throwaway tape, returning plain tensors.
/// `Mode::Eval` is deterministic; `Mode::Train` draws dropout from
/// `dropout_seed`.
pub fn encode(
    params: &EncoderParams,
    tokens: &[u32],
    mask: &[f64],
    n: usize,
    t: usize,
    mode: Mode,
    precision: Precision,
    dropout_seed: u64,
) -> Result<BatchFeatures> {
    let cfg = TapeCfg {
        mode,
        precision,
        dropout_seed,
    };
    let mut tape = Tape::new(cfg);
    let enc = bind(&mut tape, params, false);
    let f = encode_vars(&mut tape, &enc, &params.config, tokens, mask, n, t)?;
    Ok(BatchFeatures {
        shallow: tape.value(f.shallow).clone(),
        deep: tape.value(f.deep).clone(),
        tap_logits: tape.value(f.tap_logits).clone(),
        out_logits: tape.value(f.out_logits).clone(),
    })
}
