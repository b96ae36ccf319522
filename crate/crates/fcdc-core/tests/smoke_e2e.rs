//! Manual experiment driver (run with --ignored); used to calibrate the
//! desk-scale defaults before freezing the acceptance thresholds.

use fcdc_core::run::{train, ExperimentConfig};

fn run_mean(name: &str, cfg: ExperimentConfig) {
    let t0 = std::time::Instant::now();
    let mut aris = Vec::new();
    let mut coarse = Vec::new();
    for seed in [1u64, 2, 3] {
        let out = train(&ExperimentConfig { model_seed: seed, ..cfg.clone() }, None).unwrap();
        aris.push(out.report.final_eval.fine_ari.unwrap());
        coarse.push(out.report.final_eval.coarse_accuracy);
    }
    let mean = aris.iter().sum::<f64>() / 3.0;
    let cmean = coarse.iter().sum::<f64>() / 3.0;
    println!(
        "{name:>24}  {:>6.1}s  ari mean {mean:.3}  [{:.3} {:.3} {:.3}]  coarse {cmean:.3}",
        t0.elapsed().as_secs_f64(),
        aris[0], aris[1], aris[2]
    );
}

#[test]
#[ignore]
fn experiment_grid() {
    let e40 = ExperimentConfig {
        synth_fine_pool: 4,
        synth_noise_pool: 20,
        epochs: 40,
        hidden_dim: 32,
        ffn_dim: 64,
        gamma1: 1.0,
        ..Default::default()
    };
    run_mean("e40 full", e40.clone());
    run_mean("e40 no-m", ExperimentConfig { use_momentum: false, ..e40.clone() });
    run_mean("e40 no-sc", ExperimentConfig { use_self_contrast: false, ..e40.clone() });
    run_mean("e40 no-w", ExperimentConfig { use_weighting: false, ..e40.clone() });
}
