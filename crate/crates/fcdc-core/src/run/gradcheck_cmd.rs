//! Named gradient checks over every differentiable primitive and the full
//! training losses. Backs both the `gradcheck` CLI command and the test
//! suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::rng::mix_seeds;
use super::config::ExperimentConfig;
use crate::tape::gradcheck::{GradCheck, GradCheckReport};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One named check result.
#[derive(Debug, Clone)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Contract the output to a scalar through a fixed random functional so the
/// whole Jacobian participates in the check.
fn contract(tape: &mut Tape, y: Var, coeffs: &Tensor) -> Result<Var> {
    let c = tape.constant(coeffs.clone());
    let w = tape.mul(y, c)?;
    tape.sum_all(w)
}

/// Run every primitive-op gradient check for one seed.
pub fn primitive_checks(seed: u64, step: f64, tolerance: f64) -> Result<Vec<NamedCheck>> {
    let checker = GradCheck::new(step, tolerance);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(seed, 0xC0FFEE));
    let mut out = Vec::new();

    let mut push = |name: &str, r: Result<GradCheckReport>| -> Result<()> {
        out.push(NamedCheck {
            name: name.to_string(),
            report: r?,
        });
        Ok(())
    };

    // matmul, both operands
    {
        let x = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
        let co = rand_tensor(&mut rng, vec![3, 2], -1.0, 1.0);
        let (b2, co2) = (b.clone(), co.clone());
        push(
            "matmul (lhs)",
            checker.run(
                move |t, v| {
                    let bc = t.constant(b2.clone());
                    let y = t.matmul(v, bc)?;
                    contract(t, y, &co2)
                },
                &x,
            ),
        )?;
        let a = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let xb = rand_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
        push(
            "matmul (rhs)",
            checker.run(
                move |t, v| {
                    let ac = t.constant(a.clone());
                    let y = t.matmul(ac, v)?;
                    contract(t, y, &co)
                },
                &xb,
            ),
        )?;
    }

    // batched matmul, plain and transposed
    for transpose_b in [false, true] {
        let x = rand_tensor(&mut rng, vec![2, 3, 4], -1.0, 1.0);
        let bshape = if transpose_b { vec![2, 2, 4] } else { vec![2, 4, 2] };
        let b = rand_tensor(&mut rng, bshape, -1.0, 1.0);
        let co = rand_tensor(&mut rng, vec![2, 3, 2], -1.0, 1.0);
        let name = if transpose_b { "bmm (a.b^T, lhs)" } else { "bmm (lhs)" };
        let (bc, coc) = (b.clone(), co.clone());
        push(
            name,
            checker.run(
                move |t, v| {
                    let bv = t.constant(bc.clone());
                    let y = t.bmm(v, bv, transpose_b)?;
                    contract(t, y, &coc)
                },
                &x,
            ),
        )?;
        let a = rand_tensor(&mut rng, vec![2, 3, 4], -1.0, 1.0);
        let name = if transpose_b { "bmm (a.b^T, rhs)" } else { "bmm (rhs)" };
        push(
            name,
            checker.run(
                move |t, v| {
                    let av = t.constant(a.clone());
                    let y = t.bmm(av, v, transpose_b)?;
                    contract(t, y, &co)
                },
                &b,
            ),
        )?;
    }

    // softmax over rows
    {
        let x = rand_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
        let co = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        push(
            "softmax_rows",
            checker.run(
                move |t, v| {
                    let y = t.softmax_rows(v)?;
                    contract(t, y, &co)
                },
                &x,
            ),
        )?;
    }

    // cross entropy from logits
    {
        let x = rand_tensor(&mut rng, vec![4, 3], -2.0, 2.0);
        let labels = vec![0usize, 2, 1, 2];
        push(
            "cross_entropy_from_logits",
            checker.run(
                move |t, v| t.cross_entropy_from_logits(v, &labels),
                &x,
            ),
        )?;
    }

    // masked mean pooling
    {
        let x = rand_tensor(&mut rng, vec![2, 3, 4], -1.0, 1.0);
        let mask = vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let co = rand_tensor(&mut rng, vec![2, 4], -1.0, 1.0);
        push(
            "masked_mean_pool",
            checker.run(
                move |t, v| {
                    let y = t.masked_mean_pool(v, &mask)?;
                    contract(t, y, &co)
                },
                &x,
            ),
        )?;
    }

    // cosine similarity, both operands
    {
        let x = rand_tensor(&mut rng, vec![5], 0.2, 1.0);
        let b = rand_tensor(&mut rng, vec![5], 0.2, 1.0);
        let b2 = b.clone();
        push(
            "cosine_similarity (lhs)",
            checker.run(
                move |t, v| {
                    let bc = t.constant(b2.clone());
                    t.cosine_similarity(v, bc)
                },
                &x,
            ),
        )?;
        let a = rand_tensor(&mut rng, vec![5], 0.2, 1.0);
        push(
            "cosine_similarity (rhs)",
            checker.run(
                move |t, v| {
                    let ac = t.constant(a.clone());
                    t.cosine_similarity(ac, v)
                },
                &b,
            ),
        )?;
    }

    // layer norm: input, gain and bias paths
    {
        let x = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let gain = rand_tensor(&mut rng, vec![4], 0.5, 1.5);
        let bias = rand_tensor(&mut rng, vec![4], -0.5, 0.5);
        let co = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let (g2, b2, c2) = (gain.clone(), bias.clone(), co.clone());
        push(
            "layer_norm (x)",
            checker.run(
                move |t, v| {
                    let g = t.constant(g2.clone());
                    let b = t.constant(b2.clone());
                    let y = t.layer_norm(v, g, b, 1e-12)?;
                    contract(t, y, &c2)
                },
                &x,
            ),
        )?;
        let (x2, b2, c2) = (x.clone(), bias.clone(), co.clone());
        push(
            "layer_norm (gain)",
            checker.run(
                move |t, v| {
                    let xc = t.constant(x2.clone());
                    let b = t.constant(b2.clone());
                    let y = t.layer_norm(xc, v, b, 1e-12)?;
                    contract(t, y, &c2)
                },
                &gain,
            ),
        )?;
        let (x2, g2) = (x.clone(), gain.clone());
        push(
            "layer_norm (bias)",
            checker.run(
                move |t, v| {
                    let xc = t.constant(x2.clone());
                    let g = t.constant(g2.clone());
                    let y = t.layer_norm(xc, g, v, 1e-12)?;
                    contract(t, y, &co)
                },
                &bias,
            ),
        )?;
    }

    // unary elementwise
    for (name, lo, hi) in [
        ("tanh", -2.0, 2.0),
        ("gelu", -2.0, 2.0),
        ("exp", -2.0, 2.0),
        ("ln", 0.2, 3.0),
    ] {
        let x = rand_tensor(&mut rng, vec![6], lo, hi);
        let co = rand_tensor(&mut rng, vec![6], -1.0, 1.0);
        let n = name;
        push(
            name,
            checker.run(
                move |t, v| {
                    let y = match n {
                        "tanh" => t.tanh(v)?,
                        "gelu" => t.gelu(v)?,
                        "exp" => t.exp(v)?,
                        _ => t.ln(v)?,
                    };
                    contract(t, y, &co)
                },
                &x,
            ),
        )?;
    }

    // add / mul with all broadcast patterns, gradient through both sides
    {
        let x = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let same = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let rowv = rand_tensor(&mut rng, vec![4], -1.0, 1.0);
        let scal = rand_tensor(&mut rng, vec![1], -1.0, 1.0);
        let co = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        for (name, is_add) in [("add", true), ("mul", false)] {
            for (bname, b) in [("same", &same), ("rowvec", &rowv), ("scalar", &scal)] {
                let (bc, coc) = (b.clone(), co.clone());
                push(
                    &format!("{name} ({bname}, lhs)"),
                    checker.run(
                        move |t, v| {
                            let bv = t.constant(bc.clone());
                            let y = if is_add { t.add(v, bv)? } else { t.mul(v, bv)? };
                            contract(t, y, &coc)
                        },
                        &x,
                    ),
                )?;
                let (xc, coc) = (x.clone(), co.clone());
                push(
                    &format!("{name} ({bname}, rhs)"),
                    checker.run(
                        move |t, v| {
                            let xv = t.constant(xc.clone());
                            let y = if is_add { t.add(xv, v)? } else { t.mul(xv, v)? };
                            contract(t, y, &coc)
                        },
                        b,
                    ),
                )?;
            }
        }
    }

    // scale
    {
        let x = rand_tensor(&mut rng, vec![5], -1.0, 1.0);
        let co = rand_tensor(&mut rng, vec![5], -1.0, 1.0);
        push(
            "scale",
            checker.run(
                move |t, v| {
                    let y = t.scale(v, -2.5)?;
                    contract(t, y, &co)
                },
                &x,
            ),
        )?;
    }

    // dropout (eval mode: identity path)
    {
        let x = rand_tensor(&mut rng, vec![5], -1.0, 1.0);
        let co = rand_tensor(&mut rng, vec![5], -1.0, 1.0);
        push(
            "dropout (eval identity)",
            checker.run(
                move |t, v| {
                    let y = t.dropout(v, 0.3)?;
                    contract(t, y, &co)
                },
                &x,
            ),
        )?;
    }

    // gather_rows through the table
    {
        let table = rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0);
        let ids = vec![2usize, 0, 2, 3];
        let co = rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0);
        push(
            "gather_rows",
            checker.run(
                move |t, v| {
                    let y = t.gather_rows(v, &ids)?;
                    contract(t, y, &co)
                },
                &table,
            ),
        )?;
    }

    // reshape + transpose composite
    {
        let x = rand_tensor(&mut rng, vec![2, 6], -1.0, 1.0);
        let co = rand_tensor(&mut rng, vec![3, 2, 2], -1.0, 1.0);
        push(
            "reshape+transpose",
            checker.run(
                move |t, v| {
                    let r = t.reshape(v, vec![2, 2, 3])?;
                    let p = t.transpose(r, vec![2, 0, 1])?;
                    contract(t, p, &co)
                },
                &x,
            ),
        )?;
    }

    // row slice and n-ary add
    {
        let x = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
        let co = rand_tensor(&mut rng, vec![4], -1.0, 1.0);
        push(
            "row+add_n",
            checker.run(
                move |t, v| {
                    let r0 = t.row(v, 0)?;
                    let r2 = t.row(v, 2)?;
                    let s = t.add_n(&[r0, r2, r0])?;
                    contract(t, s, &co)
                },
                &x,
            ),
        )?;
    }

    Ok(out)
}

/// Checker sensitivity: the planted-corruption fixture must FAIL its check.
pub fn fault_injection_check() -> Result<NamedCheck> {
    let report = crate::tape::gradcheck::corrupted_rule_selftest()?;
    Ok(NamedCheck {
        name: "fault-injection (corrupted tanh backward must be caught)".to_string(),
        report: GradCheckReport {
            // Inverted: the overall suite passes iff the corruption was caught.
            pass: !report.pass,
            ..report
        },
    })
}

/// Gradient checks of the full contrastive loss and the combined objective,
/// differentiated at the feature level and through the encoder's parameters.
pub fn composite_checks(
    config: &ExperimentConfig,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<Vec<NamedCheck>> {
    use crate::contrastive::{
        total_loss, weighted_self_contrastive_loss, ContrastiveConfig, PositiveKey, QueueBank,
    };
    use crate::encoder::{bind_with_replacement, encode_vars, init_params};

    let checker = GradCheck::new(step, tolerance);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(seed, 0x11e15));
    let mut out = Vec::new();

    let n = 4usize;
    let h = config.hidden_dim;
    let m_classes = 3usize;
    let coarse: Vec<usize> = (0..n).map(|i| i % m_classes).collect();
    let ccfg = ContrastiveConfig {
        queue_capacity: 4,
        ..config.contrastive_config()
    };
    let mut bank = QueueBank::new(m_classes, 4);
    bank.enqueue_batch(&rand_tensor(&mut rng, vec![m_classes, h], -1.0, 1.0), &[0, 1, 2])?;

    // Eq. 11 at the feature level, both sides.
    {
        let shallow = rand_tensor(&mut rng, vec![n, h], -1.0, 1.0);
        let deep = rand_tensor(&mut rng, vec![n, h], -1.0, 1.0);
        let (s2, b2, c2, cf2) = (shallow.clone(), bank.clone(), coarse.clone(), ccfg.clone());
        out.push(NamedCheck {
            name: "contrastive loss (deep features)".to_string(),
            report: checker.run(
                move |t, v| {
                    let s = t.constant(s2.clone());
                    weighted_self_contrastive_loss(t, s, v, PositiveKey::OwnShallow, &c2, &b2, &cf2)
                },
                &deep,
            )?,
        });
        let (b2, c2, cf2) = (bank.clone(), coarse.clone(), ccfg.clone());
        out.push(NamedCheck {
            name: "contrastive loss (shallow features)".to_string(),
            report: checker.run(
                move |t, v| {
                    let d = t.constant(deep.clone());
                    weighted_self_contrastive_loss(t, v, d, PositiveKey::OwnShallow, &c2, &b2, &cf2)
                },
                &shallow,
            )?,
        });
    }

    // The combined objective, differentiated through the encoder with
    // respect to a seed-rotated selection of parameter tensors.
    {
        let mut enc_cfg = config.encoder_config(24, m_classes);
        enc_cfg.dropout_p = 0.0;
        enc_cfg.validate()?;
        let params = init_params(&enc_cfg, mix_seeds(seed, 0x9a9))?;
        let t_len = 5usize;
        let mut tokens = vec![0u32; n * t_len];
        let mut mask = vec![0.0; n * t_len];
        for i in 0..n {
            let len = rng.gen_range(2..=t_len);
            for j in 0..len {
                tokens[i * t_len + j] = rng.gen_range(2..24) as u32;
                mask[i * t_len + j] = 1.0;
            }
        }

        let named = params.tensors();
        let total_tensors = named.len();
        for pick in 0..3 {
            let idx = (seed as usize + pick * 7) % total_tensors;
            let (name, tensor) = (&named[idx].0, named[idx].1.clone());
            let (p2, c2, b2, cf2, tok, msk, ecfg) = (
                params.clone(),
                coarse.clone(),
                bank.clone(),
                ccfg.clone(),
                tokens.clone(),
                mask.clone(),
                enc_cfg.clone(),
            );
            out.push(NamedCheck {
                name: format!("combined objective (d/d {name})"),
                report: checker.run(
                    move |t, v| {
                        let enc = bind_with_replacement(t, &p2, (idx, v));
                        let f = encode_vars(t, &enc, &ecfg, &tok, &msk, n, t_len)?;
                        let (total, _) = total_loss(
                            t,
                            f.shallow,
                            f.deep,
                            f.tap_logits,
                            f.out_logits,
                            PositiveKey::OwnShallow,
                            &c2,
                            &b2,
                            &cf2,
                        )?;
                        Ok(total)
                    },
                    &tensor,
                )?,
            });
        }
    }

    Ok(out)
}

/// Analytic verification of the gradient laws: the positive similarity
/// receives exactly -1/tau, and equal-similarity negatives in different
/// groups scale by their alpha ratio.
pub fn law_checks(seed: u64) -> Vec<NamedCheck> {
    use crate::contrastive::{gradient_wrt_sims, SimGroups};

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(seed, 0x1a3));
    let mut max_pos_dev = 0.0f64;
    for _ in 0..100 {
        let tau = rng.gen_range(0.02..1.0);
        let g = SimGroups {
            sim_pos: rng.gen_range(-1.0..1.0),
            groups: (0..3)
                .map(|_| {
                    (
                        rng.gen_range(0.1..2.0),
                        (0..rng.gen_range(1..6))
                            .map(|_| rng.gen_range(-1.0..1.0))
                            .collect(),
                    )
                })
                .collect(),
        };
        let (d_pos, _) = gradient_wrt_sims(&g, tau, false);
        max_pos_dev = max_pos_dev.max((d_pos + 1.0 / tau).abs());
    }

    let mut max_ratio_dev = 0.0f64;
    for _ in 0..100 {
        let s = rng.gen_range(-1.0..1.0);
        let a = rng.gen_range(0.1..2.0);
        let b = rng.gen_range(0.1..2.0);
        let g = SimGroups {
            sim_pos: rng.gen_range(-1.0..1.0),
            groups: vec![(a, vec![s]), (b, vec![s])],
        };
        let (_, grads) = gradient_wrt_sims(&g, 0.1, false);
        max_ratio_dev = max_ratio_dev.max((grads[1][0] / grads[0][0] - b / a).abs());
    }

    vec![
        NamedCheck {
            name: "law: d loss / d sim_pos == -1/tau (100 configs)".to_string(),
            report: GradCheckReport {
                max_rel_err: max_pos_dev,
                pass: max_pos_dev < 1e-6,
                worst_coord: 0,
            },
        },
        NamedCheck {
            name: "law: equal-sim gradient ratio == alpha ratio (100 configs)".to_string(),
            report: GradCheckReport {
                max_rel_err: max_ratio_dev,
                pass: max_ratio_dev < 1e-9,
                worst_coord: 0,
            },
        },
    ]
}

#[derive(Debug, Clone)]
pub struct GradcheckCommandReport {
    pub checks: Vec<NamedCheck>,
    pub all_pass: bool,
}

impl GradcheckCommandReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{}  {}  (max_rel_err {:.3e})\n",
                if c.report.pass { "PASS" } else { "FAIL" },
                c.name,
                c.report.max_rel_err
            ));
        }
        out.push_str(&format!(
            "gradcheck: {}\n",
            if self.all_pass { "ALL PASS" } else { "FAILURES" }
        ));
        out
    }
}

/// The full gradient-verification battery: every primitive op, the
/// contrastive and combined losses, the analytic laws, and the checker's
/// own fault-injection sensitivity test. Requires dropout off.
pub fn gradcheck_command(
    config: &ExperimentConfig,
    tolerance: f64,
) -> Result<GradcheckCommandReport> {
    if config.dropout_p != 0.0 {
        return Err(crate::error::Error::invalid(
            "gradcheck",
            "config must disable dropout (dropout_p = 0)",
        ));
    }
    let mut checks = primitive_checks(config.model_seed, 1e-5, tolerance)?;
    checks.extend(composite_checks(config, config.model_seed, 1e-5, tolerance)?);
    checks.extend(law_checks(config.model_seed));
    checks.push(fault_injection_check()?);
    let all_pass = checks.iter().all(|c| c.report.pass);
    Ok(GradcheckCommandReport { checks, all_pass })
}
