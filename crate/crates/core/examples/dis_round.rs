//! One diversified informative selection round, taken apart: after the
//! warm-up labels train a probe, keep the unlabeled samples nearest to the
//! class prototypes in hidden space, then draw the most uncertain ones from
//! random batches.
//!
//! ```bash
//! cargo run --release --example dis_round
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use openpath::data::resolve_labels;
use openpath::dis::{compute_prototypes, egss_select, pis_select};
use openpath::numerics::entropy;
use openpath::synth::{generate, SynthSpec};
use openpath::{Experiment, ExperimentData, Labeler, OracleLabeler, Strategy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> openpath::Result<()> {
    let spec = SynthSpec::default();
    let synth = generate(&spec)?;
    let config = spec.experiment_config();
    let data = Arc::new(ExperimentData::new(
        synth.pool,
        Some(synth.test),
        &synth.prompts,
        &config.catalog,
    )?);
    let c = data.id_count();

    let mut exp = Experiment::new(config.clone(), Strategy::Openpath, Arc::clone(&data))?;
    let warmup = exp.next_query()?;
    let records: Vec<_> = warmup.iter().map(|&i| &data.pool.records[i]).collect();
    let labels = resolve_labels(&data.pool, &OracleLabeler { id_count: c }.label(&records)?)?;
    let record = exp.complete_round(&labels)?;
    println!(
        "warm-up: {} ID / {} OOD, probe accuracy {:.3}",
        record.id_hits,
        record.ood_hits,
        record.macc.unwrap()
    );

    let head = exp.head().expect("trained after round 1");
    let hidden = head.hidden_features(&data.pool_normalized)?;
    let labeled: &BTreeMap<_, _> = exp.pool().labeled();
    let protos = compute_prototypes(labeled, &hidden, c, false)?;
    let unlabeled: Vec<usize> = exp.pool().unlabeled().iter().copied().collect();

    let is_id = |i: usize| data.pool.records[i].oracle_label.is_some_and(|l| l < c);
    let share = |ids: &[usize]| ids.iter().filter(|&&i| is_id(i)).count() as f64 / ids.len() as f64;
    println!(
        "unlabeled pool: {} samples, {:.3} ID",
        unlabeled.len(),
        share(&unlabeled)
    );

    let near = pis_select(&unlabeled, &hidden, &protos, config.percentile_M)?;
    println!(
        "nearest {}%: {} samples, {:.3} ID",
        config.percentile_M,
        near.len(),
        share(&near)
    );

    let entropies: Vec<f64> = near
        .iter()
        .map(|&i| {
            head.predict_proba(data.pool_normalized.row(i))
                .map(|p| entropy(&p))
        })
        .collect::<openpath::Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let picks = egss_select(&near, &entropies, config.batches_B, config.budget_L, &mut rng)?;
    println!(
        "{} batches of {} candidates -> {} picks, {:.3} ID",
        config.batches_B,
        near.len() / config.batches_B,
        picks.len(),
        share(&picks)
    );
    Ok(())
}
