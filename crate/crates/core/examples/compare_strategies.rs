//! OpenPath against the baselines on the synthetic benchmark, five seeds each,
//! with the full-pool upper bound for reference.
//!
//! ```bash
//! cargo run --release --example compare_strategies [experiment.toml]
//! ```
//!
//! The optional TOML overrides the experiment settings; the class catalog
//! always comes from the generator.

use std::sync::Arc;
use std::time::Instant;

use openpath::orchestrator::{mean_by_round, run_comparison};
use openpath::synth::{generate, SynthSpec};
use openpath::{run_upper_bound, ExperimentData, Strategy};

fn main() -> openpath::Result<()> {
    let spec = SynthSpec::default();
    let synth = generate(&spec)?;
    let mut config = spec.experiment_config();
    if let Some(path) = std::env::args().nth(1) {
        let text = std::fs::read_to_string(&path).expect("readable config");
        config = config.with_overrides(&text.parse().expect("valid TOML"))?;
    }
    let data = Arc::new(ExperimentData::new(
        synth.pool,
        Some(synth.test),
        &synth.prompts,
        &config.catalog,
    )?);

    let strategies = Strategy::ALL;
    let seeds: Vec<u64> = (0..5).collect();
    let start = Instant::now();
    let runs = run_comparison(&config, Arc::clone(&data), &strategies, &seeds, 8)?;
    println!("{} runs in {:.1}s\n", runs.len(), start.elapsed().as_secs_f64());

    println!(
        "{:<17} {:>5} {:>7} {:>7} {:>7}",
        "strategy", "round", "qp", "aqr", "macc"
    );
    for s in strategies {
        let reports: Vec<_> = runs
            .iter()
            .filter(|r| r.strategy == s)
            .map(|r| &r.report)
            .collect();
        for (t, qp, aqr, macc) in mean_by_round(&reports) {
            println!(
                "{:<17} {:>5} {:>7.3} {:>7.3} {:>7.3}",
                s.name(),
                t,
                qp,
                aqr.unwrap_or(f64::NAN),
                macc.unwrap_or(f64::NAN)
            );
        }
    }
    println!("\nupper bound macc: {:.3}", run_upper_bound(&data, &config)?);
    Ok(())
}
