//! Two-layer probe classifier trained on frozen embeddings.
//!
//! `hidden = relu(W1 z + b1)`, `logits = W2 hidden + b2`. Training minimizes
//! mean cross-entropy plus `weight_decay / 2 * |theta|^2` with plain SGD and a
//! step learning-rate schedule.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::embedding_file::{self, Dtype};
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, ProbVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHead {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainSchedule {
    /// Step schedule: `lr0 * decay_factor ^ floor(epoch / decay_every)`, epochs counted from 0.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay_factor.powi((epoch / self.decay_every.max(1)) as i32)
    }

    fn validate(&self) -> Result<()> {
        if self.epochs < 1 || !(self.lr0 > 0.0) || self.batch_size < 1 {
            return Err(Error::Parameter(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProbeHead,
    /// Mean cross-entropy over each epoch's mini-batches.
    pub loss_trace: Vec<f64>,
}

impl ProbeHead {
    pub fn zeros(input_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden_dim, input_dim),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::zeros(out_dim, hidden_dim),
            b2: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut head = Self::zeros(input_dim, hidden_dim, out_dim);
        for w in [&mut head.w1, &mut head.w2] {
            let a = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.random_range(-a..a);
            }
        }
        head
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.rows()
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "probe expects {}-d input, got {}",
                self.input_dim(),
                z.len()
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, z: &[f64]) -> Vec<f64> {
        self.w1
            .iter_rows()
            .zip(&self.b1)
            .map(|(w, b)| numerics::dot(w, z) + b)
            .collect()
    }

    fn logits_from_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        self.w2
            .iter_rows()
            .zip(&self.b2)
            .map(|(w, b)| numerics::dot(w, hidden) + b)
            .collect()
    }

    /// Returns `(logits, hidden)`.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(z)?;
        let hidden: Vec<f64> = self.pre_activation(z).into_iter().map(|v| v.max(0.0)).collect();
        Ok((self.logits_from_hidden(&hidden), hidden))
    }

    pub fn predict_proba(&self, z: &[f64]) -> Result<ProbVector> {
        let (logits, _) = self.forward(z)?;
        numerics::softmax_temperature(&logits, 1.0)
    }

    pub fn predict_proba_all(&self, embeddings: &Matrix) -> Result<Vec<ProbVector>> {
        embeddings.iter_rows().map(|z| self.predict_proba(z)).collect()
    }

    pub fn hidden_features(&self, embeddings: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(embeddings.rows(), self.hidden_dim());
        for (i, z) in embeddings.iter_rows().enumerate() {
            let (_, h) = self.forward(z)?;
            out.row_mut(i).copy_from_slice(&h);
        }
        Ok(out)
    }

    fn params(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        }
    }

    pub fn param_norm_sq(&self) -> f64 {
        self.params().iter().map(|p| numerics::dot(p, p)).sum()
    }

    /// Mean cross-entropy plus `weight_decay / 2 * |theta|^2`.
    pub fn objective(&self, features: &Matrix, labels: &[usize], weight_decay: f64) -> Result<f64> {
        let mut ce = 0.0;
        for (z, &y) in features.iter_rows().zip(labels) {
            let p = self.predict_proba(z)?;
            ce -= p.as_slice()[y].max(f64::MIN_POSITIVE).ln();
        }
        Ok(ce / labels.len() as f64 + 0.5 * weight_decay * self.param_norm_sq())
    }

    /// Gradient of [`Self::objective`] over the given rows, plus their mean cross-entropy.
    pub fn gradient(
        &self,
        features: &Matrix,
        labels: &[usize],
        rows: &[usize],
        weight_decay: f64,
    ) -> Result<(ProbeHead, f64)> {
        let mut g = ProbeHead::zeros(self.input_dim(), self.hidden_dim(), self.out_dim());
        let scale = 1.0 / rows.len() as f64;
        let mut loss = 0.0;
        for &i in rows {
            let z = features.row(i);
            let y = labels[i];
            if y >= self.out_dim() {
                return Err(Error::Training(format!(
                    "label {y} outside {} outputs",
                    self.out_dim()
                )));
            }
            self.check_input(z)?;
            let pre = self.pre_activation(z);
            let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            let logits = self.logits_from_hidden(&hidden);
            let p = numerics::softmax_temperature(&logits, 1.0)?;
            loss -= p.as_slice()[y].max(f64::MIN_POSITIVE).ln();

            let dlogits: Vec<f64> = p
                .as_slice()
                .iter()
                .enumerate()
                .map(|(c, pc)| (pc - f64::from(u8::from(c == y))) * scale)
                .collect();
            let mut dhidden = vec![0.0; self.hidden_dim()];
            for (c, dl) in dlogits.iter().enumerate() {
                g.b2[c] += dl;
                let w_row = self.w2.row(c);
                for (k, gw) in g.w2.row_mut(c).iter_mut().enumerate() {
                    *gw += dl * hidden[k];
                    dhidden[k] += dl * w_row[k];
                }
            }
            for (k, dh) in dhidden.iter().enumerate() {
                if pre[k] <= 0.0 {
                    continue;
                }
                g.b1[k] += dh;
                for (gw, zv) in g.w1.row_mut(k).iter_mut().zip(z) {
                    *gw += dh * zv;
                }
            }
        }
        if weight_decay != 0.0 {
            for (gp, p) in g.params_mut().into_iter().zip(self.params()) {
                for (gv, pv) in gp.iter_mut().zip(p) {
                    *gv += weight_decay * pv;
                }
            }
        }
        Ok((g, loss * scale))
    }

    /// `theta -= lr * grad`, where `grad` already contains the weight-decay term.
    pub fn apply_step(&mut self, grad: &ProbeHead, lr: f64) {
        for (p, g) in self.params_mut().into_iter().zip(grad.params()) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= lr * gv;
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let as_row = |v: &[f64]| Matrix::from_vec(1, v.len(), v.to_vec()).expect("row shape");
        embedding_file::write(&dir.join("w1.emb"), &self.w1, Dtype::F64)?;
        embedding_file::write(&dir.join("b1.emb"), &as_row(&self.b1), Dtype::F64)?;
        embedding_file::write(&dir.join("w2.emb"), &self.w2, Dtype::F64)?;
        embedding_file::write(&dir.join("b2.emb"), &as_row(&self.b2), Dtype::F64)?;
        let manifest = CheckpointManifest {
            format: "openpath-probe".into(),
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
            out_dim: self.out_dim(),
            activation: "relu".into(),
            files: ["w1.emb", "b1.emb", "w2.emb", "b2.emb"]
                .map(String::from)
                .to_vec(),
        };
        let path = dir.join("manifest.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&text).map_err(|e| Error::ingestion(&path, "manifest", e.to_string()))?;
        let w1 = embedding_file::read(&dir.join("w1.emb"))?;
        let b1 = embedding_file::read(&dir.join("b1.emb"))?.as_slice().to_vec();
        let w2 = embedding_file::read(&dir.join("w2.emb"))?;
        let b2 = embedding_file::read(&dir.join("b2.emb"))?.as_slice().to_vec();
        let head = ProbeHead { w1, b1, w2, b2 };
        if head.input_dim() != manifest.input_dim
            || head.hidden_dim() != manifest.hidden_dim
            || head.out_dim() != manifest.out_dim
            || head.b1.len() != manifest.hidden_dim
            || head.b2.len() != manifest.out_dim
            || head.w2.cols() != manifest.hidden_dim
        {
            return Err(Error::ingestion(
                &path,
                "manifest",
                "parameter shapes disagree with manifest",
            ));
        }
        Ok(head)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    input_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
    activation: String,
    files: Vec<String>,
}

/// Mini-batch SGD on mean cross-entropy with weight decay.
///
/// Sample order is reshuffled every epoch from `schedule.seed`; the last
/// partial batch is kept.
pub fn train(
    head: &ProbeHead,
    features: &Matrix,
    labels: &[usize],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if labels.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let mut head = head.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut loss_trace = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            let (grad, loss) = head.gradient(features, labels, batch, schedule.weight_decay)?;
            epoch_loss += loss * batch.len() as f64;
            head.apply_step(&grad, lr);
        }
        loss_trace.push(epoch_loss / labels.len() as f64);
    }
    Ok(TrainOutcome { head, loss_trace })
}

/// Fraction of test samples whose argmax output equals their label.
pub fn evaluate_macc(head: &ProbeHead, features: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Degenerate("empty test set".into()));
    }
    let mut correct = 0usize;
    for (z, &y) in features.iter_rows().zip(labels) {
        let (logits, _) = head.forward(z)?;
        correct += usize::from(numerics::argmax(&logits) == y);
    }
    Ok(correct as f64 / labels.len() as f64)
}
