//! Round-1 probe accuracy for each warm-up strategy on the synthetic
//! benchmark: zero-shot filter plus kmeans++ representatives, zero-shot
//! filter alone, and plain random sampling.
//!
//! ```bash
//! cargo run --release --example warmup_ablation
//! ```

use std::sync::Arc;

use openpath::synth::{generate, SynthSpec};
use openpath::{run_experiment, ExperimentData, OracleLabeler, Strategy, WarmupStrategy};

fn main() -> openpath::Result<()> {
    let spec = SynthSpec::default();
    let synth = generate(&spec)?;
    let base = spec.experiment_config();
    let data = Arc::new(ExperimentData::new(
        synth.pool,
        Some(synth.test),
        &synth.prompts,
        &base.catalog,
    )?);

    println!("{:<14} {:>8} {:>8}", "warmup", "qp", "macc");
    for warmup in [
        WarmupStrategy::VidsCluster,
        WarmupStrategy::VidsOnly,
        WarmupStrategy::Random,
    ] {
        let (mut qp, mut macc) = (0.0, 0.0);
        let seeds = 5;
        for seed in 0..seeds {
            let mut config = base.clone();
            config.seed = seed;
            config.rounds_R = 1;
            config.warmup_strategy = warmup;
            let mut labeler = OracleLabeler {
                id_count: data.id_count(),
            };
            let report = run_experiment(&config, Arc::clone(&data), &mut labeler, Strategy::Openpath)?;
            qp += report.rounds[0].qp;
            macc += report.rounds[0].macc.unwrap_or(0.0);
        }
        println!(
            "{:<14} {:>8.3} {:>8.3}",
            warmup.to_string(),
            qp / seeds as f64,
            macc / seeds as f64
        );
    }
    Ok(())
}
