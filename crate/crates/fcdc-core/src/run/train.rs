//! The training loop: per batch — encode live, encode momentum (deep only),
//! total loss, backward, clip, optimizer step, momentum update, enqueue.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::contrastive::{PositiveKey, QueueBank};
use crate::data::{batches, build_vocab, generate_synthetic, load_corpus, tokenize, Corpus, Split};
use crate::encoder::{
    bind, encode_vars, init_params, momentum_update, save_checkpoint, Checkpoint,
};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, OptState};
use crate::rng::mix_seeds;
use crate::tape::{Mode, Tape, TapeCfg};
use crate::tensor::Tensor;

use super::config::ExperimentConfig;
use super::eval::{evaluate_tokenized, EvalSettings};
use super::report::{EpochRow, ProbeRow, RunReport, Seeds, StepRecord};

/// Everything a finished run produces, kept in memory for callers that do
/// not want to round-trip through the output directory.
pub struct TrainOutcome {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
    pub corpus: Corpus,
}

fn eval_settings(config: &ExperimentConfig) -> EvalSettings {
    EvalSettings {
        k_fine: config.k_fine,
        kmeans_restarts: config.kmeans_restarts,
        kmeans_seed: config.kmeans_seed,
        kmeans_normalize: config.kmeans_normalize,
        eval_batch_size: config.eval_batch_size,
        precision: config.precision,
    }
}

/// Train a model per the configuration. When `out_dir` is given, the
/// verbatim config, per-step JSONL metrics, the final checkpoint and the
/// run report land there.
pub fn train(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let config_hash = config.hash();
    let t_start = Instant::now();

    let corpus = match &config.data_path {
        Some(path) => load_corpus(path)?,
        None => generate_synthetic(&config.synthetic_spec())?,
    };
    corpus.validate()?;
    let vocab = build_vocab(&corpus, config.min_freq)?;
    let enc_cfg = config.encoder_config(vocab.len(), corpus.num_coarse());
    enc_cfg.validate()?;
    let ccfg = config.contrastive_config();

    let mut params = init_params(&enc_cfg, config.model_seed)?;
    // The momentum twin starts as an exact copy and never sees gradients.
    let mut momentum_params = params.clone();
    let use_queue = ccfg.use_momentum && ccfg.queue_capacity > 0 && ccfg.gamma2 > 0.0;
    let mut bank = QueueBank::new(corpus.num_coarse(), ccfg.queue_capacity);
    let mut opt = OptState::new(
        config.opt_config(),
        &params.tensors().iter().map(|(_, t)| *t).collect::<Vec<_>>(),
    );

    let tc = tokenize(&corpus, &vocab, config.max_seq_len);
    let identity_map: Vec<usize> = (0..corpus.num_coarse()).collect();
    let settings = eval_settings(config);

    let mut steps_writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.json"), config.to_canonical_json())?;
            Some(BufWriter::new(fs::File::create(dir.join("steps.jsonl"))?))
        }
        None => None,
    };

    let schedule = config.probe_schedule();
    let mut probes: Vec<ProbeRow> = Vec::new();
    if schedule.contains(&0) {
        probes.push(ProbeRow {
            epoch: 0,
            eval: evaluate_tokenized(&params, &tc, &corpus, &identity_map, &settings)?,
        });
    }

    let mut epoch_rows: Vec<EpochRow> = Vec::new();
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let t_epoch = Instant::now();
        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut count = 0usize;
        for batch in batches(&tc, Split::Train, config.batch_size, config.data_seed, epoch as u64)? {
            step += 1;
            let record = train_step(
                config,
                &enc_cfg,
                &ccfg,
                use_queue,
                &mut params,
                &mut momentum_params,
                &mut bank,
                &mut opt,
                &batch,
                step,
                epoch,
            )
            .map_err(|e| Error::TrainAbort {
                step,
                config_hash: config_hash.clone(),
                source: Box::new(e),
            })?;
            sums.0 += record.sup_deep;
            sums.1 += record.sup_shallow;
            sums.2 += record.contrastive;
            sums.3 += record.total;
            count += 1;
            if let Some(w) = steps_writer.as_mut() {
                serde_json::to_writer(&mut *w, &record)?;
                w.write_all(b"\n")?;
            }
        }
        let denom = count.max(1) as f64;
        epoch_rows.push(EpochRow {
            epoch,
            mean_sup_deep: sums.0 / denom,
            mean_sup_shallow: sums.1 / denom,
            mean_contrastive: sums.2 / denom,
            mean_total: sums.3 / denom,
            wall_clock_s: t_epoch.elapsed().as_secs_f64(),
        });
        if schedule.contains(&epoch) && epoch != config.epochs {
            probes.push(ProbeRow {
                epoch,
                eval: evaluate_tokenized(&params, &tc, &corpus, &identity_map, &settings)?,
            });
        }
    }
    if let Some(w) = steps_writer.as_mut() {
        w.flush()?;
    }

    let final_eval = evaluate_tokenized(&params, &tc, &corpus, &identity_map, &settings)?;
    if schedule.contains(&config.epochs) && config.epochs > 0 {
        probes.push(ProbeRow {
            epoch: config.epochs,
            eval: final_eval,
        });
    }

    let report = RunReport {
        config_hash,
        seeds: Seeds {
            model: config.model_seed,
            data: config.data_seed,
            kmeans: config.kmeans_seed,
        },
        epochs: epoch_rows,
        probes,
        final_eval,
        wall_clock_total_s: t_start.elapsed().as_secs_f64(),
    };
    let checkpoint = Checkpoint {
        params,
        vocab,
        coarse_names: corpus.coarse_names.clone(),
    };

    if let Some(dir) = out_dir {
        save_checkpoint(dir.join("model.ckpt"), &checkpoint)?;
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
    }

    Ok(TrainOutcome {
        report,
        checkpoint,
        corpus,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    config: &ExperimentConfig,
    enc_cfg: &crate::encoder::EncoderConfig,
    ccfg: &crate::contrastive::ContrastiveConfig,
    use_queue: bool,
    params: &mut crate::encoder::EncoderParams,
    momentum_params: &mut crate::encoder::EncoderParams,
    bank: &mut QueueBank,
    opt: &mut OptState,
    batch: &crate::data::Batch,
    step: usize,
    epoch: usize,
) -> Result<StepRecord> {
    let mut tape = Tape::new(TapeCfg {
        mode: Mode::Train,
        precision: config.precision,
        dropout_seed: mix_seeds(config.model_seed, step as u64),
    });
    let enc = bind(&mut tape, params, true);
    let f = encode_vars(
        &mut tape,
        &enc,
        enc_cfg,
        &batch.tokens,
        &batch.mask,
        batch.n,
        batch.t,
    )?;

    // Momentum features for the queue come from a separate eval-mode pass:
    // constant with respect to the live graph, deterministic, no dropout.
    let momentum_deep: Option<Tensor> = if use_queue {
        let mut mtape = Tape::new(TapeCfg {
            mode: Mode::Eval,
            precision: config.precision,
            dropout_seed: 0,
        });
        let menc = bind(&mut mtape, momentum_params, false);
        let mf = encode_vars(
            &mut mtape,
            &menc,
            enc_cfg,
            &batch.tokens,
            &batch.mask,
            batch.n,
            batch.t,
        )?;
        Some(mtape.value(mf.deep).clone())
    } else {
        None
    };

    // Removing self-contrast removes the positive key: the contrastive
    // term becomes pure weighted repulsion.
    let positive = if ccfg.use_self_contrast {
        PositiveKey::OwnShallow
    } else {
        PositiveKey::None
    };

    let (total, breakdown) = crate::contrastive::total_loss(
        &mut tape,
        f.shallow,
        f.deep,
        f.tap_logits,
        f.out_logits,
        positive,
        &batch.coarse,
        bank,
        ccfg,
    )?;
    tape.backward(total)?;

    let mut grads: Vec<Vec<f64>> = enc
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, (_, t))| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    let grad_norm = match config.clip_norm {
        Some(max) => clip_global_norm(&mut grads, max)?,
        None => grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt(),
    };
    {
        let mut refs: Vec<&mut Tensor> = params.tensors_mut().into_iter().map(|(_, t)| t).collect();
        opt.step(&mut refs, &grads)?;
    }

    if use_queue {
        momentum_update(params, momentum_params, ccfg.momentum)?;
        bank.enqueue_batch(
            momentum_deep.as_ref().expect("momentum features computed"),
            &batch.coarse,
        )?;
    }

    Ok(StepRecord {
        step,
        epoch,
        sup_deep: breakdown.sup_deep,
        sup_shallow: breakdown.sup_shallow,
        contrastive: breakdown.contrastive,
        total: breakdown.total,
        grad_norm,
        queue_fill: bank.fill_levels(),
    })
}
