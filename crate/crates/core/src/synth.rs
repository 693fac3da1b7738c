//! Synthetic open-set embedding benchmark.
//!
//! Every class is an isotropic unit-variance Gaussian around
//! `separation * u_c`, with `u_c` a random unit vector. Prompt embeddings are
//! `u_c` plus Gaussian noise of std 0.05, which points the same way as the
//! class center perturbed by noise of std `0.05 * separation`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ClassCatalog, ExperimentConfig};
use crate::data::{DataDir, Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, l2_normalize_in_place, Matrix};

pub const PROMPT_NOISE: f64 = 0.05;

pub const BENCHMARK_LR: f64 = 0.1;
pub const BENCHMARK_BATCH: usize = 16;

const CENTER_STREAM: u64 = 1;
const POOL_STREAM: u64 = 2;
const TEST_STREAM: u64 = 3;
const PROMPT_STREAM: u64 = 4;
const ORDER_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub id_classes: usize,
    pub ood_classes: usize,
    pub samples_per_class: usize,
    /// ID-only held-out samples per ID class.
    pub test_per_class: usize,
    pub dim: usize,
    /// Center radius in units of the per-dimension noise std.
    pub cluster_separation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            id_classes: 3,
            ood_classes: 6,
            samples_per_class: 500,
            test_per_class: 200,
            dim: 32,
            cluster_separation: 4.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SynthSpec =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        let problems = spec.validate();
        if problems.is_empty() {
            Ok(spec)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.id_classes < 2 {
            p.push("id_classes: must be >= 2".into());
        }
        if self.dim < 2 {
            p.push("dim: must be >= 2".into());
        }
        if !(self.cluster_separation >= 0.0) {
            p.push("cluster_separation: must be >= 0".into());
        }
        if self.samples_per_class < 1 {
            p.push("samples_per_class: must be >= 1".into());
        }
        p
    }

    pub fn total_classes(&self) -> usize {
        self.id_classes + self.ood_classes
    }

    /// Default experiment settings for this benchmark. The probe schedule
    /// is sized for a few hundred labels: the library default (lr 1e-3,
    /// batch 64) takes only a handful of steps on 50 samples and leaves the
    /// head near its initialization.
    pub fn experiment_config(&self) -> ExperimentConfig {
        let mut config = ExperimentConfig {
            catalog: self.catalog(),
            ..ExperimentConfig::default()
        };
        config.training.lr = BENCHMARK_LR;
        config.training.batch_size = BENCHMARK_BATCH;
        config
    }

    pub fn catalog(&self) -> ClassCatalog {
        ClassCatalog {
            id_class_names: (0..self.id_classes).map(|c| format!("target_{c}")).collect(),
            ood_class_names: (0..self.ood_classes).map(|c| format!("other_{c}")).collect(),
            task_description: "synthetic open-set embedding classification".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub pool: Dataset,
    pub test: Dataset,
    pub prompts: Dataset,
    /// Unit class directions, one row per class.
    pub centers: Matrix,
    pub catalog: ClassCatalog,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        if l2_normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

fn cluster_rows(center: &[f64], separation: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let noise = gaussian(&mut rng, center.len());
            center
                .iter()
                .zip(noise)
                .map(|(c, e)| separation * c + e)
                .collect()
        })
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let classes = spec.total_classes();
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            unit_vector(
                &mut ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, CENTER_STREAM, c as u64)),
                spec.dim,
            )
        })
        .collect();

    let mut pool_rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(classes * spec.samples_per_class);
    for (c, center) in centers.iter().enumerate() {
        let seed = derive_seed(spec.seed, POOL_STREAM, c as u64);
        pool_rows.extend(
            cluster_rows(center, spec.cluster_separation, spec.samples_per_class, seed)
                .into_iter()
                .map(|r| (c, r)),
        );
    }
    pool_rows.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        spec.seed,
        ORDER_STREAM,
        0,
    )));
    let pool = assemble("s", pool_rows)?;

    let mut test_rows = Vec::with_capacity(spec.id_classes * spec.test_per_class);
    for (c, center) in centers.iter().enumerate().take(spec.id_classes) {
        let seed = derive_seed(spec.seed, TEST_STREAM, c as u64);
        test_rows.extend(
            cluster_rows(center, spec.cluster_separation, spec.test_per_class, seed)
                .into_iter()
                .map(|r| (c, r)),
        );
    }
    let test = assemble("t", test_rows)?;

    let catalog = spec.catalog();
    let prompt_rows: Vec<Vec<f64>> = centers
        .iter()
        .enumerate()
        .map(|(c, center)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, PROMPT_STREAM, c as u64));
            let noise = gaussian(&mut rng, spec.dim);
            center
                .iter()
                .zip(noise)
                .map(|(u, e)| u + PROMPT_NOISE * e)
                .collect()
        })
        .collect();
    let prompt_records = catalog
        .all_names()
        .enumerate()
        .map(|(c, name)| SampleRecord {
            sample_id: name.to_string(),
            embedding_index: c,
            oracle_label: Some(c),
            image_ref: None,
        })
        .collect();
    let prompts = Dataset::new(Matrix::from_rows(&prompt_rows)?, prompt_records)?;

    Ok(SynthData {
        pool,
        test,
        prompts,
        centers: Matrix::from_rows(&centers)?,
        catalog,
    })
}

fn assemble(prefix: &str, rows: Vec<(usize, Vec<f64>)>) -> Result<Dataset> {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, (c, _))| SampleRecord {
            sample_id: format!("{prefix}{i:06}"),
            embedding_index: i,
            oracle_label: Some(*c),
            image_ref: None,
        })
        .collect();
    let matrix = Matrix::from_rows(&rows.into_iter().map(|(_, r)| r).collect::<Vec<_>>())?;
    Dataset::new(matrix, records)
}

impl SynthData {
    /// Writes pool, test and prompt files plus an `experiment.toml` whose
    /// catalog matches the generated classes.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = DataDir::new(dir);
        d.write(DataDir::POOL, &self.pool)?;
        d.write(DataDir::TEST, &self.test)?;
        d.write(DataDir::PROMPTS, &self.prompts)?;
        let mut config = config.clone();
        config.catalog = self.catalog.clone();
        let path = dir.join("experiment.toml");
        std::fs::write(&path, config.to_toml_string()).map_err(|e| Error::io(&path, e))
    }

    /// Share of pool samples belonging to ID classes.
    pub fn id_ratio(&self) -> f64 {
        let c = self.catalog.id_count();
        self.pool.id_total(c).unwrap_or(0) as f64 / self.pool.len() as f64
    }
}

/// Straight-line reference implementations used to cross-check the
/// optimized selection paths in tests.
pub mod oracle {
    use std::collections::BTreeSet;

    /// The `k` candidates with the highest entropy, ties to the lower id,
    /// found by repeated linear scans.
    pub fn oracle_topk_entropy(candidates: &[usize], entropies: &[f64], k: usize) -> BTreeSet<usize> {
        let mut picked = BTreeSet::new();
        let mut used = vec![false; candidates.len()];
        for _ in 0..k.min(candidates.len()) {
            let mut best: Option<usize> = None;
            for j in 0..candidates.len() {
                if used[j] {
                    continue;
                }
                best = match best {
                    None => Some(j),
                    Some(b) => {
                        let better = entropies[j] > entropies[b]
                            || (entropies[j] == entropies[b] && candidates[j] < candidates[b]);
                        Some(if better { j } else { b })
                    }
                };
            }
            let b = best.unwrap();
            used[b] = true;
            picked.insert(candidates[b]);
        }
        picked
    }

    /// Positions of the values at nearest rank `m` percentile, counting how
    /// many items precede each one.
    pub fn oracle_percentile(values: &[f64], m: f64) -> BTreeSet<usize> {
        let n = values.len();
        let mut count = n;
        for k in 1..=n {
            if k as f64 * 100.0 >= m * n as f64 - 1e-9 {
                count = k;
                break;
            }
        }
        (0..n)
            .filter(|&i| {
                let rank = (0..n)
                    .filter(|&j| values[j] < values[i] || (values[j] == values[i] && j < i))
                    .count();
                rank < count
            })
            .collect()
    }

    /// `p_c = 1 / sum_j exp((s_j - s_c) / tau)`.
    pub fn oracle_softmax(scores: &[f64], tau: f64) -> Vec<f64> {
        scores
            .iter()
            .map(|sc| {
                let denom: f64 = scores.iter().map(|sj| ((sj - sc) / tau).exp()).sum();
                1.0 / denom
            })
            .collect()
    }
}
