//! Dense-vector primitives shared by selection and training.
//!
//! Every reduction runs left to right over the input so that results are
//! bit-reproducible for a given input order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Copy with every row scaled to unit L2 norm.
    pub fn l2_normalized(&self) -> Result<Matrix> {
        let mut out = self.clone();
        for i in 0..out.rows {
            l2_normalize_in_place(out.row_mut(i))
                .map_err(|_| Error::Degenerate(format!("row {i} has zero norm")))?;
        }
        Ok(out)
    }
}

/// Probability vector: entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("empty probability vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Parameter(format!("probability entry {v} outside [0, 1]")));
        }
        let total = sum(&values);
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Parameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(values))
    }

    /// Renormalized prefix of the first `n` entries.
    pub fn truncated(&self, n: usize) -> Result<ProbVector> {
        if n == 0 || n > self.0.len() {
            return Err(Error::Parameter(format!(
                "cannot keep {n} of {} classes",
                self.0.len()
            )));
        }
        let head = &self.0[..n];
        let mass = sum(head);
        if mass <= 0.0 {
            return Err(Error::Degenerate("no probability mass on kept classes".into()));
        }
        Ok(Self(head.iter().map(|p| p / mass).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let d = x - y;
        acc + d * d
    })
}

pub fn l2_normalize_in_place(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate("cannot normalize a zero-norm vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of {}-d and {}-d vectors",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Temperature-scaled softmax, `exp(s_c / tau) / sum_c exp(s_c / tau)`.
pub fn softmax_temperature(scores: &[f64], tau: f64) -> Result<ProbVector> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Parameter(format!("temperature must be > 0, got {tau}")));
    }
    if scores.is_empty() {
        return Err(Error::Degenerate("softmax of an empty score vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Degenerate("non-finite score".into()));
    }
    let max = scores[argmax(scores)];
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total = sum(&exps);
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

/// Natural-log Shannon entropy with `0 ln 0 = 0`.
pub fn entropy(p: &ProbVector) -> f64 {
    -p.0.iter()
        .filter(|&&x| x > 0.0)
        .fold(0.0, |acc, &x| acc + x * x.ln())
}

/// Number of items a nearest-rank `m`-th percentile keeps out of `n`.
pub fn percentile_count(n: usize, m: f64) -> usize {
    let exact = m * n as f64 / 100.0;
    let rounded = exact.round();
    // guard against 7 * 100 / 100 landing a hair above an integer
    let count = if (exact - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded
    } else {
        exact.ceil()
    };
    (count as usize).clamp(1, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PercentileSelection {
    /// Value of the `count`-th smallest item.
    pub threshold: f64,
    pub count: usize,
    /// Positions into the input of the selected items, ascending by value then position.
    pub selected: Vec<usize>,
}

/// Nearest-rank percentile threshold with an exact selection count.
///
/// Ties at the threshold are resolved by ascending input position, so the
/// selection always holds exactly `ceil(m / 100 * n)` items.
pub fn percentile_rank_threshold(values: &[f64], m: f64) -> Result<PercentileSelection> {
    if values.is_empty() {
        return Err(Error::Degenerate("percentile of an empty sequence".into()));
    }
    if !(m > 0.0 && m <= 100.0) {
        return Err(Error::Parameter(format!(
            "percentile must lie in (0, 100], got {m}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Degenerate("NaN in percentile input".into()));
    }
    let count = percentile_count(values.len(), m);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order.truncate(count);
    Ok(PercentileSelection {
        threshold: values[order[count - 1]],
        count,
        selected: order,
    })
}

/// SplitMix64 finalizer; derives independent stream seeds from a master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 0.707_106_781_186_547_5).abs() < 1e-9);
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        for tau in [1e-3, 0.1, 5.0] {
            let p = softmax_temperature(&[0.5, 0.5, 0.5], tau).unwrap();
            for v in p.as_slice() {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        let p = softmax_temperature(&[0.2, 0.1], 0.1).unwrap();
        assert!((p.as_slice()[0] - 0.7311).abs() < 1e-4);
        assert!((p.as_slice()[1] - 0.2689).abs() < 1e-4);
        let p = softmax_temperature(&[0.9, 0.1], 0.001).unwrap();
        assert_eq!(p.argmax(), 0);
        assert!(p.as_slice()[0] > 0.999);
    }

    #[test]
    fn softmax_rejects_bad_tau() {
        assert!(matches!(
            softmax_temperature(&[1.0], 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            softmax_temperature(&[1.0], -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn entropy_examples() {
        let one_hot = ProbVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(entropy(&one_hot), 0.0);
        let uniform = ProbVector::new(vec![1.0 / 3.0; 3]).unwrap();
        assert!((entropy(&uniform) - 1.0986).abs() < 1e-4);
        let skewed = ProbVector::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert!((entropy(&skewed) - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn percentile_examples() {
        let values: Vec<f64> = (0..1000).map(|i| (i * 7919 % 1000) as f64).collect();
        assert_eq!(percentile_rank_threshold(&values, 25.0).unwrap().count, 250);

        let s = percentile_rank_threshold(&[5.0], 100.0).unwrap();
        assert_eq!((s.threshold, s.count), (5.0, 1));

        let s = percentile_rank_threshold(&[3.0, 1.0, 2.0, 4.0], 50.0).unwrap();
        assert_eq!((s.threshold, s.count), (2.0, 2));
        assert_eq!(s.selected, vec![1, 2]);
    }

    #[test]
    fn percentile_ties_keep_exact_count() {
        let s = percentile_rank_threshold(&[1.0, 1.0, 1.0, 1.0], 50.0).unwrap();
        assert_eq!(s.selected, vec![0, 1]);
        assert!(matches!(
            percentile_rank_threshold(&[], 50.0),
            Err(Error::Degenerate(_))
        ));
        assert!(percentile_rank_threshold(&[1.0], 0.0).is_err());
    }

    #[test]
    fn percentile_count_avoids_float_overshoot() {
        assert_eq!(percentile_count(100, 7.0), 7);
        assert_eq!(percentile_count(300, 7.0), 21);
        assert_eq!(percentile_count(3, 50.0), 2);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_argmax_stable(
            scores in proptest::collection::vec(-1.0f64..1.0, 1..20),
        ) {
            let expected = argmax(&scores);
            for tau in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
                let p = softmax_temperature(&scores, tau).unwrap();
                prop_assert!((sum(p.as_slice()) - 1.0).abs() < 1e-6);
                prop_assert_eq!(p.argmax(), expected);
            }
        }

        #[test]
        fn cosine_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 1..16),
            b in proptest::collection::vec(-10.0f64..10.0, 16),
            s in 1e-3f64..1e3,
        ) {
            prop_assume!(norm(&a) > 1e-6);
            let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
            prop_assert!((cosine_similarity(&a, &scaled).unwrap() - 1.0).abs() < 1e-9);
            let b = &b[..a.len()];
            if norm(b) > 1e-6 {
                prop_assert!(cosine_similarity(&a, b).unwrap().abs() <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn percentile_count_matches_sort(
            values in proptest::collection::vec(-100.0f64..100.0, 1..500),
            m in proptest::sample::select(vec![1.0, 7.0, 25.0, 50.0, 100.0]),
        ) {
            let n = values.len();
            let s = percentile_rank_threshold(&values, m).unwrap();
            let expected = (m as usize * n).div_ceil(100);
            prop_assert_eq!(s.count, expected);
            prop_assert_eq!(s.selected.len(), expected);
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(s.threshold, sorted[expected - 1]);
        }
    }

    #[test]
    fn uniform_maximizes_entropy() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let dim = 5;
        let uniform = entropy(&ProbVector::new(vec![1.0 / dim as f64; dim]).unwrap());
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() + 1e-12).collect();
            let total = sum(&raw);
            let p = ProbVector::new(raw.iter().map(|x| x / total).collect()).unwrap();
            assert!(entropy(&p) <= uniform + 1e-12);
        }
    }
}
