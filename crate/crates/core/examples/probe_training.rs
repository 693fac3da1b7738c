//! Trains the two-layer probe head on a labeled subset, prints the loss
//! curve and test accuracy, and round-trips a checkpoint.
//!
//! ```bash
//! cargo run --release --example probe_training
//! ```

use openpath::probe::{evaluate_macc, train, ProbeHead, TrainSchedule};
use openpath::synth::{generate, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> openpath::Result<()> {
    let spec = SynthSpec::default();
    let data = generate(&spec)?;
    let config = spec.experiment_config();
    let c = spec.id_classes;

    let pool = data.pool.embeddings.l2_normalized()?;
    let (rows, labels): (Vec<usize>, Vec<usize>) = data
        .pool
        .records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.oracle_label.filter(|&l| l < c).map(|l| (i, l)))
        .take(60)
        .unzip();
    let features = pool.select_rows(&rows);

    let t = &config.training;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = ProbeHead::init(features.cols(), t.hidden_dim, c, &mut rng);
    let schedule = TrainSchedule {
        epochs: t.epochs,
        lr0: t.lr,
        decay_factor: t.lr_decay_factor,
        decay_every: t.lr_decay_every,
        weight_decay: t.weight_decay,
        batch_size: t.batch_size,
        seed: 2,
    };
    let out = train(&head, &features, &labels, &schedule)?;
    for (e, loss) in out.loss_trace.iter().enumerate().step_by(5) {
        println!("epoch {e:>2}  lr {:.0e}  loss {loss:.4}", schedule.lr_at(e));
    }

    let test = data.test.embeddings.l2_normalized()?;
    let truth: Vec<usize> = data
        .test
        .records
        .iter()
        .map(|r| r.oracle_label.unwrap())
        .collect();
    println!(
        "\ntrained on {} labels: test accuracy {:.3}",
        labels.len(),
        evaluate_macc(&out.head, &test, &truth)?
    );

    let dir = std::env::temp_dir().join("openpath-probe-example");
    out.head.save(&dir)?;
    let restored = ProbeHead::load(&dir)?;
    println!(
        "checkpoint at {} restores identically: {}",
        dir.display(),
        restored == out.head
    );
    Ok(())
}
