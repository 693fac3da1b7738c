//! Rounds after warm-up: prototype-based ID candidate selection followed by
//! entropy-guided stochastic sampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::LabelState;
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    /// `(class, mean feature)`, ascending by class.
    pub prototypes: Vec<(usize, Vec<f64>)>,
    pub ood_centroid: Option<Vec<f64>>,
}

fn mean_of(features: &Matrix, rows: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; features.cols()];
    for &i in rows {
        for (a, v) in acc.iter_mut().zip(features.row(i)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= rows.len() as f64);
    acc
}

/// Per-class mean of labeled ID features, and the mean of non-target
/// features when `with_ood_centroid` is set.
///
/// Fails with [`Error::MissingClass`] listing every ID class without a label.
pub fn compute_prototypes(
    labeled: &BTreeMap<usize, LabelState>,
    features: &Matrix,
    id_count: usize,
    with_ood_centroid: bool,
) -> Result<PrototypeSet> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); id_count];
    let mut ood = Vec::new();
    for (&i, &state) in labeled {
        match state {
            LabelState::Id(c) if c < id_count => members[c].push(i),
            LabelState::Id(c) => {
                return Err(Error::Consistency(format!(
                    "sample {i} labeled with class {c} >= {id_count}"
                )))
            }
            LabelState::NonTarget => ood.push(i),
            LabelState::Unlabeled => {}
        }
    }
    let missing: Vec<usize> = (0..id_count).filter(|&c| members[c].is_empty()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClass(missing));
    }
    Ok(PrototypeSet {
        prototypes: members
            .iter()
            .enumerate()
            .map(|(c, rows)| (c, mean_of(features, rows)))
            .collect(),
        ood_centroid: (with_ood_centroid && !ood.is_empty()).then(|| mean_of(features, &ood)),
    })
}

/// Like [`compute_prototypes`], but a class with no labels takes the mean of
/// the unlabeled samples pseudo-labeled as that class. Classes with neither
/// are left out. Returns the classes that needed the fallback.
pub fn compute_prototypes_with_fallback(
    labeled: &BTreeMap<usize, LabelState>,
    features: &Matrix,
    id_count: usize,
    with_ood_centroid: bool,
    unlabeled: &[usize],
    pseudo_labels: &[usize],
) -> Result<(PrototypeSet, Vec<usize>)> {
    let partial: BTreeMap<usize, LabelState> = labeled.clone();
    match compute_prototypes(&partial, features, id_count, with_ood_centroid) {
        Ok(set) => Ok((set, Vec::new())),
        Err(Error::MissingClass(missing)) => {
            let mut prototypes = Vec::new();
            for c in 0..id_count {
                let rows: Vec<usize> = if missing.contains(&c) {
                    unlabeled
                        .iter()
                        .copied()
                        .filter(|&i| pseudo_labels[i] == c)
                        .collect()
                } else {
                    labeled
                        .iter()
                        .filter(|(_, s)| **s == LabelState::Id(c))
                        .map(|(i, _)| *i)
                        .collect()
                };
                if !rows.is_empty() {
                    prototypes.push((c, mean_of(features, &rows)));
                }
            }
            if prototypes.is_empty() {
                return Err(Error::MissingClass(missing));
            }
            let ood: Vec<usize> = labeled
                .iter()
                .filter(|(_, s)| **s == LabelState::NonTarget)
                .map(|(i, _)| *i)
                .collect();
            let set = PrototypeSet {
                prototypes,
                ood_centroid: (with_ood_centroid && !ood.is_empty()).then(|| mean_of(features, &ood)),
            };
            Ok((set, missing))
        }
        Err(e) => Err(e),
    }
}

/// Cosine distance to the nearest ID prototype.
///
/// With an OOD centroid present, a sample strictly closer to it than to
/// every ID prototype gets `+inf`.
pub fn ood_distance(z: &[f64], protos: &PrototypeSet) -> Result<f64> {
    let mut best = f64::INFINITY;
    for (_, p) in &protos.prototypes {
        let d = 1.0 - numerics::cosine_similarity(z, p)?;
        if d < best {
            best = d;
        }
    }
    if let Some(o) = &protos.ood_centroid {
        if 1.0 - numerics::cosine_similarity(z, o)? < best {
            return Ok(f64::INFINITY);
        }
    }
    Ok(best)
}

/// The `ceil(m / 100 * |pool|)` unlabeled samples nearest to an ID prototype,
/// ascending by distance then index.
///
/// Rows of `features` are indexed by sample index. Samples whose feature has
/// zero norm rank last.
pub fn pis_select(
    unlabeled: &[usize],
    features: &Matrix,
    protos: &PrototypeSet,
    m: f64,
) -> Result<Vec<usize>> {
    if unlabeled.is_empty() {
        return Err(Error::Degenerate("empty unlabeled pool".into()));
    }
    let distances = unlabeled
        .iter()
        .map(|&i| match ood_distance(features.row(i), protos) {
            Ok(d) => Ok(d),
            Err(Error::Degenerate(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..unlabeled.len()).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .total_cmp(&distances[b])
            .then(unlabeled[a].cmp(&unlabeled[b]))
    });
    let sorted: Vec<f64> = order.iter().map(|&k| distances[k]).collect();
    let count = numerics::percentile_rank_threshold(&sorted, m)?.count;
    Ok(order[..count].iter().map(|&k| unlabeled[k]).collect())
}

/// Per-batch quota: `floor(l / b)`, plus one for the first `l mod b` batches.
pub fn batch_quotas(l: usize, b: usize) -> Vec<usize> {
    (0..b).map(|k| l / b + usize::from(k < l % b)).collect()
}

/// Contiguous near-equal split of `n` items into `b` batches, remainder on the first batches.
pub fn batch_bounds(n: usize, b: usize) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    (0..b)
        .map(|k| {
            let len = n / b + usize::from(k < n % b);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Entropy-guided stochastic sampling.
///
/// Candidates are shuffled, split into `b` contiguous batches, and each batch
/// contributes its highest-entropy samples (ties by ascending sample index) up
/// to its quota. Returns `min(l, |candidates|)` distinct samples, batch by batch.
pub fn egss_select<R: Rng + ?Sized>(
    candidates: &[usize],
    entropies: &[f64],
    b: usize,
    l: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if b < 1 {
        return Err(Error::Parameter("batch count must be >= 1".into()));
    }
    if candidates.len() != entropies.len() {
        return Err(Error::Shape(format!(
            "{} candidates with {} entropies",
            candidates.len(),
            entropies.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Degenerate("no candidates".into()));
    }
    let mut positions: Vec<usize> = (0..candidates.len()).collect();
    positions.shuffle(rng);

    let target = l.min(candidates.len());
    let quotas = batch_quotas(l, b);
    let mut ranked: Vec<Vec<usize>> = batch_bounds(positions.len(), b)
        .into_iter()
        .map(|r| {
            let mut batch = positions[r].to_vec();
            batch.sort_by(|&x, &y| {
                entropies[y]
                    .total_cmp(&entropies[x])
                    .then(candidates[x].cmp(&candidates[y]))
            });
            batch
        })
        .collect();

    let mut taken: Vec<usize> = ranked.iter().zip(&quotas).map(|(r, &q)| q.min(r.len())).collect();
    // batches smaller than their quota hand the leftover to later batches
    let mut missing = target - taken.iter().sum::<usize>();
    for (t, r) in taken.iter_mut().zip(&ranked) {
        let extra = missing.min(r.len() - *t);
        *t += extra;
        missing -= extra;
    }
    let mut out = Vec::with_capacity(target);
    for (r, t) in ranked.iter_mut().zip(taken) {
        out.extend(r[..t].iter().map(|&p| candidates[p]));
    }
    Ok(out)
}
