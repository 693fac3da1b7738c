//! Generates the synthetic benchmark and writes it as a data directory that
//! `openpath run` and `openpath serve` can read.
//!
//! ```bash
//! cargo run --release --example synthetic_benchmark -- target/synthetic
//! ```

use std::path::PathBuf;

use openpath::synth::{generate, SynthSpec};
use openpath::zero_shot::{select_id_candidates_round1, zero_shot_probabilities, PromptSet};

fn main() -> openpath::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from("target/synthetic"), PathBuf::from);
    let spec = SynthSpec::default();
    let data = generate(&spec)?;
    data.write(&out, &spec.experiment_config())?;

    println!("wrote {}", out.display());
    println!("  pool   {} x {}", data.pool.len(), data.pool.dim());
    println!("  test   {} (ID only)", data.test.len());
    println!("  prompts {}", data.prompts.len());
    println!("  ID share of pool {:.3}", data.id_ratio());

    let c = data.catalog.id_count();
    let prompts = PromptSet::from_dataset(&data.prompts, &data.catalog)?;
    let probs = zero_shot_probabilities(&data.pool.embeddings, &prompts, 0.01)?;
    let candidates = select_id_candidates_round1(&probs, c);
    let hits = candidates
        .iter()
        .filter(|&&i| data.pool.records[i].oracle_label.is_some_and(|l| l < c))
        .count();
    println!(
        "  zero-shot ID candidates {} ({:.3} truly ID)",
        candidates.len(),
        hits as f64 / candidates.len() as f64
    );
    Ok(())
}
