use std::collections::BTreeSet;

use openpath::cluster::representative_selection;
use openpath::numerics::{softmax_temperature, Matrix, ProbVector};
use openpath::probe::{train, ProbeHead, TrainSchedule};
use openpath::synth::{generate, SynthSpec};
use openpath::zero_shot::{select_id_candidates_round1, zero_shot_probabilities, PromptSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn candidate_filter_matches_per_sample_check(n in 1usize..1000, k in 2usize..8, seed in any::<u64>()) {
        let c = 1 + (seed as usize % (k - 1));
        let z = matrix(n, 6, seed);
        let g = matrix(k, 6, seed ^ 0xabc);
        let prompts = PromptSet::new((0..k).map(|j| j.to_string()).collect(), g.clone(), c).unwrap();
        let probs = zero_shot_probabilities(&z, &prompts, 0.01).unwrap();
        let got: BTreeSet<usize> = select_id_candidates_round1(&probs, c).into_iter().collect();
        let want: BTreeSet<usize> = (0..n)
            .filter(|&i| {
                let sims: Vec<f64> = g.iter_rows().map(|p| {
                    let dot: f64 = p.iter().zip(z.row(i)).map(|(a, b)| a * b).sum();
                    dot / (p.iter().map(|x| x * x).sum::<f64>() * z.row(i).iter().map(|x| x * x).sum::<f64>()).sqrt()
                }).collect();
                let best = (0..k).fold(0, |b, j| if sims[j] > sims[b] { j } else { b });
                best < c
            })
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn pseudo_labels_ignore_temperature(seed in any::<u64>()) {
        let z = matrix(40, 5, seed);
        let g = matrix(6, 5, seed.wrapping_add(1));
        let prompts = PromptSet::new((0..6).map(|j| j.to_string()).collect(), g, 3).unwrap();
        let base: Vec<usize> = zero_shot_probabilities(&z, &prompts, 1e-3).unwrap().iter().map(ProbVector::argmax).collect();
        for tau in [0.01, 0.1, 1.0] {
            let other: Vec<usize> = zero_shot_probabilities(&z, &prompts, tau).unwrap().iter().map(ProbVector::argmax).collect();
            prop_assert_eq!(&base, &other);
        }
    }

    #[test]
    fn candidates_survive_monotone_rescaling(
        sims in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 5), 1..60),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let probs = |f: &dyn Fn(f64) -> f64| -> Vec<ProbVector> {
            sims.iter().map(|row| softmax_temperature(&row.iter().map(|&s| f(s)).collect::<Vec<_>>(), 0.05).unwrap()).collect()
        };
        let plain = select_id_candidates_round1(&probs(&|s| s), 2);
        let affine = select_id_candidates_round1(&probs(&|s| scale * s + shift), 2);
        let cubic = select_id_candidates_round1(&probs(&|s| s * s * s), 2);
        prop_assert_eq!(&plain, &affine);
        prop_assert_eq!(&plain, &cubic);
    }

    #[test]
    fn probability_argmax_follows_logits(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = ProbeHead::init(7, 5, 4, &mut rng);
        let x = matrix(20, 7, seed);
        for row in x.iter_rows() {
            let (logits, _) = head.forward(row).unwrap();
            let p = head.predict_proba(row).unwrap();
            prop_assert_eq!(p.argmax(), openpath::numerics::argmax(&logits));
        }
    }
}

/// Warm-up clustering runs over the zero-shot ID candidates with k = 3 (one
/// per ID cluster) or k = L. Over the full nine-cluster pool kmeans++ can
/// place two seeds in one cluster, so that case is not a seed-stability one.
#[test]
fn seeds_agree_on_inertia_for_separated_clusters() {
    for separation in [4.0, 8.0] {
        let spec = SynthSpec {
            cluster_separation: separation,
            ..SynthSpec::default()
        };
        let data = generate(&spec).unwrap();
        let prompts = PromptSet::from_dataset(&data.prompts, &data.catalog).unwrap();
        let probs = zero_shot_probabilities(&data.pool.embeddings, &prompts, 0.01).unwrap();
        let ids = select_id_candidates_round1(&probs, spec.id_classes);
        let points = data.pool.embeddings.l2_normalized().unwrap().select_rows(&ids);
        for k in [spec.id_classes, 50] {
            let inertia: Vec<f64> = (0..5)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    representative_selection(&ids, &points, k, true, &mut rng)
                        .unwrap()
                        .1
                        .inertia
                })
                .collect();
            let lo = inertia.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = inertia.iter().cloned().fold(0.0, f64::max);
            assert!(hi <= lo * 1.1, "separation {separation}, k {k}: {inertia:?}");
        }

        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (picks, c) = representative_selection(&ids, &points, 50, true, &mut rng).unwrap();
            (picks, c.centroids)
        };
        assert_eq!(run(3), run(3));
    }
}

#[test]
fn loss_falls_on_average_at_the_default_rate() {
    let spec = SynthSpec {
        samples_per_class: 100,
        ood_classes: 0,
        ..SynthSpec::default()
    };
    let data = generate(&spec).unwrap();
    let x = data.pool.embeddings.l2_normalized().unwrap();
    let y: Vec<usize> = data
        .pool
        .records
        .iter()
        .map(|r| r.oracle_label.unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let head = ProbeHead::init(x.cols(), 256, 3, &mut rng);
    let schedule = TrainSchedule {
        epochs: 30,
        lr0: 1e-3,
        decay_factor: 0.1,
        decay_every: 20,
        weight_decay: 8e-4,
        batch_size: 64,
        seed: 1,
    };
    let trace = train(&head, &x, &y, &schedule).unwrap().loss_trace;
    let trailing: Vec<f64> = trace.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for w in trailing.windows(2) {
        assert!(w[1] <= w[0], "{trailing:?}");
    }
    assert!(trailing.last() < trailing.first());
}
