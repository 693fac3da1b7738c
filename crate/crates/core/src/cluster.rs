//! kmeans++ clustering and nearest-sample-to-centroid selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub centroids: Matrix,
    /// Cluster id for each point row.
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step, first entry uses the initial centroids.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

/// kmeans++ seeding. Returns the chosen point rows, all distinct.
///
/// The first seed is uniform; each next one is drawn with probability
/// proportional to its squared distance to the nearest seed so far. When
/// every remaining point coincides with a seed, the draw falls back to a
/// uniform pick among unchosen rows.
pub fn kmeanspp_seed_indices<R: Rng + ?Sized>(points: &Matrix, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::Parameter(format!(
            "cannot seed {k} centroids from {n} points"
        )));
    }
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut nearest: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();
    while chosen.len() < k {
        let total = nearest
            .iter()
            .zip(&taken)
            .filter(|(_, t)| !**t)
            .fold(0.0, |acc, (d, _)| acc + d);
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last = None;
            for i in (0..n).filter(|&i| !taken[i]) {
                if nearest[i] <= 0.0 {
                    continue;
                }
                acc += nearest[i];
                last = Some(i);
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.or(last).expect("positive mass implies a candidate")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, p) in points.iter_rows().enumerate() {
            let d = squared_distance(p, points.row(next));
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    Ok(chosen)
}

pub fn kmeanspp_seed<R: Rng + ?Sized>(points: &Matrix, k: usize, rng: &mut R) -> Result<Matrix> {
    Ok(points.select_rows(&kmeanspp_seed_indices(points, k, rng)?))
}

fn assign(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    points
        .iter_rows()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter_rows().enumerate() {
                let d = squared_distance(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            (best, best_d)
        })
        .unzip()
}

/// Lloyd iterations from the given centroids.
///
/// Stops once the largest relative centroid move drops below `tol` or after
/// `max_iters` updates. An empty cluster takes over the point farthest from
/// its current centroid.
pub fn lloyd_refine(points: &Matrix, centroids: &Matrix, max_iters: usize, tol: f64) -> Result<Clustering> {
    if centroids.rows() == 0 {
        return Err(Error::Parameter("no centroids to refine".into()));
    }
    if centroids.cols() != points.cols() {
        return Err(Error::Shape(format!(
            "{}-d centroids for {}-d points",
            centroids.cols(),
            points.cols()
        )));
    }
    let k = centroids.rows();
    let dim = points.cols();
    let mut centroids = centroids.clone();
    let (mut assignment, mut dists) = assign(points, &centroids);
    let mut inertia_trace = vec![dists.iter().sum()];
    let mut iterations = 0;

    while iterations < max_iters {
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut next = centroids.clone();
        let mut stolen = vec![false; points.rows()];
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                for (dst, s) in next.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *dst = s / count as f64;
                }
            } else {
                let far = (0..points.rows())
                    .filter(|&i| !stolen[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    });
                if let Some(i) = far {
                    stolen[i] = true;
                    next.row_mut(j).copy_from_slice(points.row(i));
                }
            }
        }
        let shift = (0..k)
            .map(|j| {
                let moved = squared_distance(next.row(j), centroids.row(j)).sqrt();
                let scale = crate::numerics::norm(centroids.row(j)).max(f64::EPSILON);
                moved / scale
            })
            .fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        let (a, d) = assign(points, &centroids);
        assignment = a;
        dists = d;
        inertia_trace.push(dists.iter().sum());
        if shift < tol {
            break;
        }
    }
    Ok(Clustering {
        centroids,
        assignment,
        inertia: *inertia_trace.last().unwrap(),
        inertia_trace,
        iterations,
    })
}

/// For each centroid in order, the unused candidate closest to it in L2.
///
/// `points` holds one row per candidate; the returned values are entries of
/// `candidate_ids`. Ties go to the earlier candidate.
pub fn nearest_to_centroids(
    candidate_ids: &[usize],
    points: &Matrix,
    centroids: &Matrix,
) -> Result<Vec<usize>> {
    if candidate_ids.len() != points.rows() {
        return Err(Error::Shape(format!(
            "{} candidate ids for {} rows",
            candidate_ids.len(),
            points.rows()
        )));
    }
    if candidate_ids.len() < centroids.rows() {
        return Err(Error::Parameter(format!(
            "{} candidates cannot cover {} centroids",
            candidate_ids.len(),
            centroids.rows()
        )));
    }
    let mut used = vec![false; candidate_ids.len()];
    let mut out = Vec::with_capacity(centroids.rows());
    for c in centroids.iter_rows() {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, p) in points.iter_rows().enumerate() {
            if used[i] {
                continue;
            }
            let d = squared_distance(p, c);
            if d < best_d || best.is_none() {
                best_d = d;
                best = Some(i);
            }
        }
        let i = best.expect("enough candidates");
        used[i] = true;
        out.push(candidate_ids[i]);
    }
    Ok(out)
}

/// Seeds `k` clusters, optionally refines them, and returns the candidate
/// nearest to each centroid.
pub fn representative_selection<R: Rng + ?Sized>(
    candidate_ids: &[usize],
    points: &Matrix,
    k: usize,
    refine: bool,
    rng: &mut R,
) -> Result<(Vec<usize>, Clustering)> {
    let seeds = kmeanspp_seed(points, k, rng)?;
    let clustering = if refine {
        lloyd_refine(points, &seeds, DEFAULT_MAX_ITERS, DEFAULT_TOL)?
    } else {
        lloyd_refine(points, &seeds, 0, DEFAULT_TOL)?
    };
    let picks = nearest_to_centroids(candidate_ids, points, &clustering.centroids)?;
    Ok((picks, clustering))
}
