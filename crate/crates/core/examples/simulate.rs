//! A full run driven by a custom labeler. The annotator here is the ground
//! truth with a fixed share of ID samples mistakenly marked non-target, which
//! shows how label noise feeds back into later queries.
//!
//! ```bash
//! cargo run --release --example simulate -- 0.1
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use openpath::report::to_markdown;
use openpath::synth::{generate, SynthSpec};
use openpath::{run_experiment, ExperimentData, LabelState, Labeler, SampleRecord, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct CarelessAnnotator {
    id_count: usize,
    miss_rate: f64,
    rng: ChaCha8Rng,
}

impl Labeler for CarelessAnnotator {
    fn label(&mut self, samples: &[&SampleRecord]) -> openpath::Result<BTreeMap<String, LabelState>> {
        Ok(samples
            .iter()
            .map(|r| {
                let state = match r.oracle_label {
                    Some(c) if c < self.id_count && !self.rng.random_bool(self.miss_rate) => {
                        LabelState::Id(c)
                    }
                    _ => LabelState::NonTarget,
                };
                (r.sample_id.clone(), state)
            })
            .collect())
    }
}

fn main() -> openpath::Result<()> {
    let miss_rate: f64 = std::env::args()
        .nth(1)
        .map_or(0.1, |s| s.parse().expect("a probability"));
    let spec = SynthSpec::default();
    let synth = generate(&spec)?;
    let config = spec.experiment_config();
    let data = Arc::new(ExperimentData::new(
        synth.pool,
        Some(synth.test),
        &synth.prompts,
        &config.catalog,
    )?);

    let mut annotator = CarelessAnnotator {
        id_count: data.id_count(),
        miss_rate,
        rng: ChaCha8Rng::seed_from_u64(11),
    };
    let report = run_experiment(&config, data, &mut annotator, Strategy::Openpath)?;
    println!("annotator misses {:.0}% of ID samples\n", miss_rate * 100.0);
    print!("{}", to_markdown(&report));
    Ok(())
}
