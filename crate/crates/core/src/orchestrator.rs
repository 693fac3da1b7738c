//! The active-learning loop: warm-up query, per-round probe training,
//! strategy-specific queries and per-round metrics.
//!
//! [`Experiment`] is a step-wise engine (`next_query` / `complete_round`) so
//! the batch simulator and the annotation service drive identical state.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster;
use crate::config::{ClassCatalog, ExperimentConfig, PrototypeSpace, WarmupStrategy};
use crate::data::{DataDir, Dataset, LabelState, PoolState, SampleRecord};
use crate::dis;
use crate::error::{Error, Result};
use crate::numerics::{self, derive_seed, Matrix, ProbVector};
use crate::probe::{self, ProbeHead, TrainSchedule};
use crate::zero_shot::{self, PromptSet};

const QUERY_STREAM: u64 = 0x51;
const HEAD_STREAM: u64 = 0x52;
const SHUFFLE_STREAM: u64 = 0x53;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Openpath,
    Random,
    Entropy,
    Margin,
    LeastConfidence,
    Kmeanspp,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Openpath,
        Strategy::Random,
        Strategy::Entropy,
        Strategy::Margin,
        Strategy::LeastConfidence,
        Strategy::Kmeanspp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Openpath => "openpath",
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Margin => "margin",
            Strategy::LeastConfidence => "least_confidence",
            Strategy::Kmeanspp => "kmeanspp",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown strategy {s:?}; expected one of {}",
                    Strategy::ALL.map(Strategy::name).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRoundRecord {
    pub round: usize,
    /// Queried sample ids, in selection order.
    pub query: Vec<String>,
    /// Label given to each queried sample, aligned with `query`.
    pub labels: Vec<LabelState>,
    pub id_hits: usize,
    pub ood_hits: usize,
    pub qp: f64,
    pub aqr: Option<f64>,
    pub macc: Option<f64>,
    /// Size of the candidate set the query was drawn from.
    pub candidates: usize,
    pub loss_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub strategy: Strategy,
    pub seed: u64,
    pub pool_size: usize,
    pub id_total: Option<usize>,
    pub sgd_momentum: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub header: ReportHeader,
    pub rounds: Vec<QueryRoundRecord>,
}

pub fn compute_qp(record: &QueryRoundRecord) -> Result<f64> {
    let total = record.id_hits + record.ood_hits;
    if total == 0 {
        return Err(Error::Metric("query precision of an empty query".into()));
    }
    Ok(record.id_hits as f64 / total as f64)
}

/// Accumulated share of the pool's ID samples queried so far.
pub fn compute_aqr(history: &[QueryRoundRecord], total_id_in_pool: Option<usize>) -> Result<f64> {
    let total = total_id_in_pool.ok_or_else(|| Error::Metric("pool ID count unknown".into()))?;
    if total == 0 {
        return Err(Error::Metric("pool holds no ID samples".into()));
    }
    let hits: usize = history.iter().map(|r| r.id_hits).sum();
    Ok(hits as f64 / total as f64)
}

/// Supplies labels for queried samples.
pub trait Labeler {
    fn label(&mut self, samples: &[&SampleRecord]) -> Result<BTreeMap<String, LabelState>>;
}

/// Labels from dataset ground truth: class `< C` is ID, anything else non-target.
#[derive(Debug, Clone, Copy)]
pub struct OracleLabeler {
    pub id_count: usize,
}

impl Labeler for OracleLabeler {
    fn label(&mut self, samples: &[&SampleRecord]) -> Result<BTreeMap<String, LabelState>> {
        samples
            .iter()
            .map(|r| {
                let state = match r.oracle_label {
                    Some(c) if c < self.id_count => LabelState::Id(c),
                    Some(_) => LabelState::NonTarget,
                    None => {
                        return Err(Error::Metric(format!(
                            "no ground truth for sample {}",
                            r.sample_id
                        )))
                    }
                };
                Ok((r.sample_id.clone(), state))
            })
            .collect()
    }
}

/// Pool, test split and prompts with embeddings L2-normalized once.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub pool: Dataset,
    pub pool_normalized: Matrix,
    pub test: Option<(Matrix, Vec<usize>)>,
    pub prompts: PromptSet,
    pub catalog: ClassCatalog,
    pub id_total: Option<usize>,
}

impl ExperimentData {
    pub fn new(
        pool: Dataset,
        test: Option<Dataset>,
        prompts: &Dataset,
        catalog: &ClassCatalog,
    ) -> Result<Self> {
        let id_count = catalog.id_count();
        let prompts = PromptSet::from_dataset(prompts, catalog)?;
        if prompts.embeddings.cols() != pool.dim() {
            return Err(Error::Shape(format!(
                "pool is {}-d but prompts are {}-d",
                pool.dim(),
                prompts.embeddings.cols()
            )));
        }
        let prompts = PromptSet {
            embeddings: prompts.embeddings.l2_normalized()?,
            ..prompts
        };
        let pool_normalized = pool.embeddings.l2_normalized()?;
        let test = match test {
            None => None,
            Some(t) => {
                if t.dim() != pool.dim() {
                    return Err(Error::Shape(format!(
                        "test split is {}-d, pool {}-d",
                        t.dim(),
                        pool.dim()
                    )));
                }
                let labels = t
                    .records
                    .iter()
                    .map(|r| match r.oracle_label {
                        Some(l) if l < id_count => Ok(l),
                        other => Err(Error::Consistency(format!(
                            "test sample {} has label {other:?}, expected an ID class",
                            r.sample_id
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some((t.embeddings.l2_normalized()?, labels))
            }
        };
        let id_total = pool.id_total(id_count);
        Ok(Self {
            pool,
            pool_normalized,
            test,
            prompts,
            catalog: catalog.clone(),
            id_total,
        })
    }

    /// Loads `pool`, optional `test` and `prompts` from a data directory.
    pub fn load(dir: &DataDir, catalog: &ClassCatalog) -> Result<Self> {
        let pool = dir.load(DataDir::POOL)?;
        let test = if dir.has(DataDir::TEST) {
            Some(dir.load(DataDir::TEST)?)
        } else {
            None
        };
        let prompts = dir.load(DataDir::PROMPTS)?;
        Self::new(pool, test, &prompts, catalog)
    }

    pub fn id_count(&self) -> usize {
        self.catalog.id_count()
    }
}

/// One active-learning run, advanced one round at a time.
pub struct Experiment {
    config: ExperimentConfig,
    strategy: Strategy,
    data: Arc<ExperimentData>,
    pool: PoolState,
    zero_shot: Vec<ProbVector>,
    head: Option<ProbeHead>,
    history: Vec<QueryRoundRecord>,
    pending: Option<PendingQuery>,
}

#[derive(Debug, Clone)]
struct PendingQuery {
    ids: Vec<usize>,
    candidates: usize,
    started: Instant,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, strategy: Strategy, data: Arc<ExperimentData>) -> Result<Self> {
        let problems = config.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        if config.catalog != data.catalog {
            return Err(Error::Config(vec![
                "id_class_names: catalog differs from the one the data was loaded with".into(),
            ]));
        }
        if config.budget_L > data.pool.len() {
            warn!(
                "budget_L = {} exceeds the pool of {} samples; queries will be truncated",
                config.budget_L,
                data.pool.len()
            );
        }
        let zero_shot = zero_shot::zero_shot_probabilities(&data.pool_normalized, &data.prompts, config.tau)?;
        Ok(Self {
            pool: PoolState::new(data.pool.len()),
            config,
            strategy,
            data,
            zero_shot,
            head: None,
            history: Vec::new(),
            pending: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn data(&self) -> &Arc<ExperimentData> {
        &self.data
    }

    pub fn pool(&self) -> &PoolState {
        &self.pool
    }

    pub fn history(&self) -> &[QueryRoundRecord] {
        &self.history
    }

    pub fn head(&self) -> Option<&ProbeHead> {
        self.head.as_ref()
    }

    /// Round the next (or pending) query belongs to, starting at 1.
    pub fn current_round(&self) -> usize {
        self.history.len() + 1
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_none()
            && (self.history.len() >= self.config.rounds_R || self.pool.unlabeled().is_empty())
    }

    pub fn pending(&self) -> Option<&[usize]> {
        self.pending.as_ref().map(|p| p.ids.as_slice())
    }

    pub fn header(&self) -> ReportHeader {
        ReportHeader {
            strategy: self.strategy,
            seed: self.config.seed,
            pool_size: self.data.pool.len(),
            id_total: self.data.id_total,
            sgd_momentum: 0.0,
            config: self.config.clone(),
        }
    }

    pub fn report(&self) -> ExperimentReport {
        ExperimentReport {
            header: self.header(),
            rounds: self.history.clone(),
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, stream, self.current_round() as u64))
    }

    /// Selects the query for the current round, or returns the one already pending.
    pub fn next_query(&mut self) -> Result<Vec<usize>> {
        if let Some(p) = &self.pending {
            return Ok(p.ids.clone());
        }
        if self.is_done() {
            return Err(Error::Consistency("experiment already finished".into()));
        }
        let started = Instant::now();
        let unlabeled: Vec<usize> = self.pool.unlabeled().iter().copied().collect();
        let budget = self.config.budget_L.min(unlabeled.len());
        if budget < self.config.budget_L {
            warn!(
                "round {}: only {} unlabeled samples left for a budget of {}",
                self.current_round(),
                unlabeled.len(),
                self.config.budget_L
            );
        }
        let (ids, candidates) = if self.history.is_empty() {
            self.warmup_query(&unlabeled, budget)?
        } else {
            self.round_query(&unlabeled, budget)?
        };
        debug_assert_eq!(ids.len(), budget.min(candidates));
        self.pending = Some(PendingQuery {
            ids: ids.clone(),
            candidates,
            started,
        });
        Ok(ids)
    }

    fn random_pick(&self, from: &[usize], k: usize) -> Vec<usize> {
        let mut pool = from.to_vec();
        pool.shuffle(&mut self.rng(QUERY_STREAM));
        pool.truncate(k);
        pool
    }

    fn warmup_query(&self, unlabeled: &[usize], budget: usize) -> Result<(Vec<usize>, usize)> {
        let warmup = match self.strategy {
            Strategy::Openpath => self.config.warmup_strategy,
            _ => WarmupStrategy::Random,
        };
        if warmup == WarmupStrategy::Random {
            return Ok((self.random_pick(unlabeled, budget), unlabeled.len()));
        }
        let id_count = self.data.id_count();
        let probs: Vec<ProbVector> = unlabeled.iter().map(|&i| self.zero_shot[i].clone()).collect();
        let candidates: Vec<usize> = zero_shot::select_id_candidates_round1(&probs, id_count)
            .into_iter()
            .map(|k| unlabeled[k])
            .collect();
        let mut picks = if candidates.len() <= budget {
            candidates.clone()
        } else if warmup == WarmupStrategy::VidsCluster {
            let points = self.data.pool_normalized.select_rows(&candidates);
            let (picks, _) = cluster::representative_selection(
                &candidates,
                &points,
                budget,
                self.config.refine,
                &mut self.rng(QUERY_STREAM),
            )?;
            picks
        } else {
            self.random_pick(&candidates, budget)
        };
        if picks.len() < budget {
            let deficit = budget - picks.len();
            warn!(
                "only {} zero-shot ID candidates for a budget of {budget}; filling {deficit} by ID score",
                candidates.len()
            );
            let mut rest: Vec<(usize, f64)> = unlabeled
                .iter()
                .filter(|&&i| self.zero_shot[i].argmax() >= id_count)
                .map(|&i| {
                    let p = &self.zero_shot[i].as_slice()[..id_count];
                    (i, p[numerics::argmax(p)])
                })
                .collect();
            rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            picks.extend(rest.into_iter().take(deficit).map(|(i, _)| i));
            // the fill draws from the whole unlabeled pool
            return Ok((picks, unlabeled.len()));
        }
        Ok((picks, candidates.len()))
    }

    /// Probabilities over the ID classes only, renormalized when the head has
    /// an extra non-target output.
    fn id_probabilities(&self, head: &ProbeHead, rows: &[usize]) -> Result<Vec<ProbVector>> {
        let id_count = self.data.id_count();
        rows.iter()
            .map(|&i| {
                let p = head.predict_proba(self.data.pool_normalized.row(i))?;
                if p.len() == id_count {
                    Ok(p)
                } else {
                    p.truncated(id_count)
                }
            })
            .collect()
    }

    fn round_query(&self, unlabeled: &[usize], budget: usize) -> Result<(Vec<usize>, usize)> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Consistency("no trained probe before a selection round".into()))?;
        let by_score = |scores: Vec<f64>| -> Vec<usize> {
            // highest score first, ties to the lower index
            let mut order: Vec<usize> = (0..unlabeled.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .total_cmp(&scores[a])
                    .then(unlabeled[a].cmp(&unlabeled[b]))
            });
            order.into_iter().take(budget).map(|k| unlabeled[k]).collect()
        };
        match self.strategy {
            Strategy::Random => Ok((self.random_pick(unlabeled, budget), unlabeled.len())),
            Strategy::Entropy => {
                let p = self.id_probabilities(head, unlabeled)?;
                Ok((
                    by_score(p.iter().map(numerics::entropy).collect()),
                    unlabeled.len(),
                ))
            }
            Strategy::Margin => {
                let p = self.id_probabilities(head, unlabeled)?;
                let scores = p
                    .iter()
                    .map(|p| {
                        let mut v = p.as_slice().to_vec();
                        v.sort_by(|a, b| b.total_cmp(a));
                        -(v[0] - v.get(1).copied().unwrap_or(0.0))
                    })
                    .collect();
                Ok((by_score(scores), unlabeled.len()))
            }
            Strategy::LeastConfidence => {
                let p = self.id_probabilities(head, unlabeled)?;
                let scores = p.iter().map(|p| -p.as_slice()[p.argmax()]).collect();
                Ok((by_score(scores), unlabeled.len()))
            }
            Strategy::Kmeanspp => {
                let points = self.data.pool_normalized.select_rows(unlabeled);
                let (picks, _) = cluster::representative_selection(
                    unlabeled,
                    &points,
                    budget,
                    self.config.refine,
                    &mut self.rng(QUERY_STREAM),
                )?;
                Ok((picks, unlabeled.len()))
            }
            Strategy::Openpath => self.dis_query(head, unlabeled, budget),
        }
    }

    fn dis_query(&self, head: &ProbeHead, unlabeled: &[usize], budget: usize) -> Result<(Vec<usize>, usize)> {
        let features = match self.config.feature_space_for_prototypes {
            PrototypeSpace::ProbeHidden => head.hidden_features(&self.data.pool_normalized)?,
            PrototypeSpace::RawEmbedding => self.data.pool_normalized.clone(),
        };
        let pseudo: Vec<usize> = self.zero_shot.iter().map(ProbVector::argmax).collect();
        let (protos, fallback) = dis::compute_prototypes_with_fallback(
            self.pool.labeled(),
            &features,
            self.data.id_count(),
            self.config.use_ood_centroid_in_pis,
            unlabeled,
            &pseudo,
        )?;
        if !fallback.is_empty() {
            warn!(
                "round {}: ID classes {fallback:?} have no labels yet; using zero-shot pseudo-labels for their prototypes",
                self.current_round()
            );
        }
        let candidates = dis::pis_select(unlabeled, &features, &protos, self.config.percentile_M)?;
        let entropies: Vec<f64> = self
            .id_probabilities(head, &candidates)?
            .iter()
            .map(numerics::entropy)
            .collect();
        let picks = dis::egss_select(
            &candidates,
            &entropies,
            self.config.batches_B,
            budget,
            &mut self.rng(QUERY_STREAM),
        )?;
        if picks.len() < budget {
            warn!(
                "round {}: {} prototype candidates for a budget of {budget}; querying all of them",
                self.current_round(),
                candidates.len()
            );
        }
        Ok((picks, candidates.len()))
    }

    /// Commits labels for the pending query, retrains the probe and records metrics.
    pub fn complete_round(&mut self, labels: &BTreeMap<usize, LabelState>) -> Result<QueryRoundRecord> {
        let pending = self
            .pending
            .clone()
            .ok_or_else(|| Error::Consistency("no pending query".into()))?;
        if labels.len() != pending.ids.len() || pending.ids.iter().any(|i| !labels.contains_key(i)) {
            return Err(Error::Consistency(format!(
                "expected labels for exactly the {} pending samples",
                pending.ids.len()
            )));
        }
        let id_count = self.data.id_count();
        for (&i, &s) in labels {
            if let LabelState::Id(c) = s {
                if c >= id_count {
                    return Err(Error::Consistency(format!(
                        "sample {} labeled class {c}, only {id_count} ID classes",
                        self.data.pool.records[i].sample_id
                    )));
                }
            }
        }
        self.pool = self.pool.commit_labels(labels)?;
        self.pending = None;

        let (head, loss_trace) = self.train_probe()?;
        let macc = match &self.data.test {
            Some((x, y)) => Some(probe::evaluate_macc(&head, x, y)?),
            None => None,
        };
        self.head = Some(head);

        let query_labels: Vec<LabelState> = pending.ids.iter().map(|i| labels[i]).collect();
        let id_hits = query_labels.iter().filter(|s| s.is_id()).count();
        let mut record = QueryRoundRecord {
            round: self.current_round(),
            query: pending
                .ids
                .iter()
                .map(|&i| self.data.pool.records[i].sample_id.clone())
                .collect(),
            labels: query_labels,
            id_hits,
            ood_hits: pending.ids.len() - id_hits,
            qp: 0.0,
            aqr: None,
            macc,
            candidates: pending.candidates,
            loss_trace,
            wall_time: Some(pending.started.elapsed().as_secs_f64()),
        };
        record.qp = compute_qp(&record).unwrap_or(0.0);
        self.history.push(record);
        let aqr = compute_aqr(&self.history, self.data.id_total).ok();
        let record = self.history.last_mut().unwrap();
        record.aqr = aqr;
        Ok(record.clone())
    }

    fn train_probe(&self) -> Result<(ProbeHead, Vec<f64>)> {
        let id_count = self.data.id_count();
        let with_ood = self.config.train_with_ood_class;
        let out_dim = id_count + usize::from(with_ood);
        let (rows, labels): (Vec<usize>, Vec<usize>) = self
            .pool
            .labeled()
            .iter()
            .filter_map(|(&i, &s)| match s {
                LabelState::Id(c) => Some((i, c)),
                LabelState::NonTarget if with_ood => Some((i, id_count)),
                _ => None,
            })
            .unzip();
        let round = self.current_round() as u64;
        train_head(
            &self.config,
            &self.data.pool_normalized.select_rows(&rows),
            &labels,
            out_dim,
            round,
        )
    }
}

fn train_head(
    config: &ExperimentConfig,
    features: &Matrix,
    labels: &[usize],
    out_dim: usize,
    round: u64,
) -> Result<(ProbeHead, Vec<f64>)> {
    let t = &config.training;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, HEAD_STREAM, round));
    let head = ProbeHead::init(features.cols(), t.hidden_dim, out_dim, &mut init_rng);
    if labels.is_empty() {
        warn!("round {round}: no trainable labels; keeping the untrained probe");
        return Ok((head, Vec::new()));
    }
    let schedule = TrainSchedule {
        epochs: t.epochs,
        lr0: t.lr,
        decay_factor: t.lr_decay_factor,
        decay_every: t.lr_decay_every,
        weight_decay: t.weight_decay,
        batch_size: t.batch_size,
        seed: derive_seed(config.seed, SHUFFLE_STREAM, round),
    };
    let out = probe::train(&head, features, labels, &schedule)?;
    Ok((out.head, out.loss_trace))
}

/// Runs every round, asking `labeler` for each query's labels.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: Arc<ExperimentData>,
    labeler: &mut dyn Labeler,
    strategy: Strategy,
) -> Result<ExperimentReport> {
    run_experiment_with(config, data, labeler, strategy, |_| Ok(()))
}

/// [`run_experiment`] with a callback invoked after every completed round.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    data: Arc<ExperimentData>,
    labeler: &mut dyn Labeler,
    strategy: Strategy,
    mut on_round: impl FnMut(&QueryRoundRecord) -> Result<()>,
) -> Result<ExperimentReport> {
    let mut exp = Experiment::new(config.clone(), strategy, data)?;
    while !exp.is_done() {
        let ids = exp.next_query()?;
        let records: Vec<&SampleRecord> = ids.iter().map(|&i| &exp.data.pool.records[i]).collect();
        let by_id = labeler.label(&records)?;
        let labels = crate::data::resolve_labels(&exp.data.pool, &by_id)?;
        let record = exp.complete_round(&labels)?;
        on_round(&record)?;
    }
    Ok(exp.report())
}

/// MAcc of a probe trained on every ground-truth ID sample in the pool.
pub fn run_upper_bound(data: &ExperimentData, config: &ExperimentConfig) -> Result<f64> {
    let id_count = data.id_count();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, r) in data.pool.records.iter().enumerate() {
        match r.oracle_label {
            Some(c) if c < id_count => {
                rows.push(i);
                labels.push(c);
            }
            Some(_) => {}
            None => {
                return Err(Error::Metric(format!(
                    "sample {} has no ground truth",
                    r.sample_id
                )))
            }
        }
    }
    let (x, y) = data
        .test
        .as_ref()
        .ok_or_else(|| Error::Metric("no test split for MAcc".into()))?;
    let (head, _) = train_head(
        config,
        &data.pool_normalized.select_rows(&rows),
        &labels,
        id_count,
        0,
    )?;
    probe::evaluate_macc(&head, x, y)
}

/// One `(strategy, seed)` cell of a comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub report: ExperimentReport,
}

/// Runs every strategy under every seed with oracle labels, on up to `jobs`
/// worker threads. Results come back in `(strategy, seed)` input order.
pub fn run_comparison(
    config: &ExperimentConfig,
    data: Arc<ExperimentData>,
    strategies: &[Strategy],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<ComparisonRun>> {
    let cells: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let run_cell = |(strategy, seed): (Strategy, u64)| -> Result<ComparisonRun> {
        let mut cfg = config.clone();
        cfg.seed = seed;
        let mut labeler = OracleLabeler {
            id_count: data.id_count(),
        };
        let report = run_experiment(&cfg, Arc::clone(&data), &mut labeler, strategy)?;
        Ok(ComparisonRun {
            strategy,
            seed,
            report,
        })
    };
    let jobs = jobs.max(1).min(cells.len().max(1));
    if jobs == 1 {
        return cells.into_iter().map(run_cell).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<ComparisonRun>>>> =
        cells.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if k >= cells.len() {
                    break;
                }
                let out = run_cell(cells[k]);
                *slots[k].lock().unwrap() = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every cell ran"))
        .collect()
}

/// Mean `(qp, aqr, macc)` per round over a set of reports; missing metrics are skipped.
pub fn mean_by_round(reports: &[&ExperimentReport]) -> Vec<(usize, f64, Option<f64>, Option<f64>)> {
    let rounds = reports.iter().map(|r| r.rounds.len()).max().unwrap_or(0);
    (0..rounds)
        .map(|t| {
            let recs: Vec<&QueryRoundRecord> = reports.iter().filter_map(|r| r.rounds.get(t)).collect();
            let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            (
                t + 1,
                mean(recs.iter().map(|r| r.qp).collect()).unwrap_or(0.0),
                mean(recs.iter().filter_map(|r| r.aqr).collect()),
                mean(recs.iter().filter_map(|r| r.macc).collect()),
            )
        })
        .collect()
}
