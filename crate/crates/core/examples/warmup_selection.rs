//! The first query step by step: prompt texts, zero-shot probabilities,
//! the pseudo-ID candidate set, and kmeans++ representatives inside it.
//!
//! ```bash
//! cargo run --release --example warmup_selection
//! ```

use openpath::cluster::representative_selection;
use openpath::config::DEFAULT_PROMPT_TEMPLATE;
use openpath::synth::{generate, SynthSpec};
use openpath::zero_shot::{
    build_prompt_texts, select_id_candidates_round1, zero_shot_probabilities, PromptSet,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> openpath::Result<()> {
    let spec = SynthSpec::default();
    let data = generate(&spec)?;
    let catalog = &data.catalog;
    let c = catalog.id_count();

    let texts = build_prompt_texts(catalog, DEFAULT_PROMPT_TEMPLATE)?;
    println!("question for an LLM: {}", texts.gpt_question);
    for p in &texts.prompts {
        println!("  prompt: {p}");
    }

    let prompts = PromptSet::from_dataset(&data.prompts, catalog)?;
    let probs = zero_shot_probabilities(&data.pool.embeddings, &prompts, 0.01)?;
    let candidates = select_id_candidates_round1(&probs, c);
    let is_id = |i: usize| data.pool.records[i].oracle_label.is_some_and(|l| l < c);
    println!(
        "\n{} of {} samples have an ID pseudo-label, {} of them truly ID",
        candidates.len(),
        data.pool.len(),
        candidates.iter().filter(|&&i| is_id(i)).count()
    );

    let points = data.pool.embeddings.l2_normalized()?.select_rows(&candidates);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (picks, clustering) = representative_selection(&candidates, &points, 50, true, &mut rng)?;
    println!(
        "kmeans++ then {} Lloyd iterations, inertia {:.3}",
        clustering.iterations, clustering.inertia
    );
    let mut per_class = vec![0usize; spec.total_classes()];
    for &i in &picks {
        per_class[data.pool.records[i].oracle_label.unwrap()] += 1;
    }
    println!(
        "{} representatives, true class counts {:?}",
        picks.len(),
        per_class
    );
    println!(
        "query precision {:.3}",
        picks.iter().filter(|&&i| is_id(i)).count() as f64 / picks.len() as f64
    );
    Ok(())
}
