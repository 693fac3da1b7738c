//! Dataset ingestion, pool bookkeeping and per-sample label state.

pub mod embedding_file;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use embedding_file::Dtype;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub embedding_index: usize,
    /// Fine-grained ground-truth class in `0..C+K`, when known.
    pub oracle_label: Option<usize>,
    pub image_ref: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetadataRow {
    id: String,
    label: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<String>,
}

/// Embedding matrix plus its aligned sample records.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub embeddings: Matrix,
    pub records: Vec<SampleRecord>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(embeddings: Matrix, records: Vec<SampleRecord>) -> Result<Self> {
        if embeddings.rows() != records.len() {
            return Err(Error::Shape(format!(
                "{} embedding rows but {} records",
                embeddings.rows(),
                records.len()
            )));
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.embedding_index != i {
                return Err(Error::Shape(format!(
                    "record {} points at row {} instead of {i}",
                    r.sample_id, r.embedding_index
                )));
            }
            if index.insert(r.sample_id.clone(), i).is_some() {
                return Err(Error::Consistency(format!("duplicate sample id {}", r.sample_id)));
            }
        }
        Ok(Self {
            embeddings,
            records,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.index.get(sample_id).copied()
    }

    /// Ground-truth ID class of a sample: `Some(Some(c))` for ID, `Some(None)` for OOD,
    /// `None` when the label is unknown.
    pub fn truth(&self, i: usize, id_count: usize) -> Option<Option<usize>> {
        self.records[i]
            .oracle_label
            .map(|l| if l < id_count { Some(l) } else { None })
    }

    /// Count of ground-truth ID samples, or `None` if any label is unknown.
    pub fn id_total(&self, id_count: usize) -> Option<usize> {
        self.records.iter().try_fold(0, |acc, r| {
            r.oracle_label.map(|l| acc + usize::from(l < id_count))
        })
    }
}

pub fn load_dataset(embedding_file: &Path, metadata_file: &Path) -> Result<Dataset> {
    let embeddings = embedding_file::read(embedding_file)?;
    let text = fs::read_to_string(metadata_file).map_err(|e| Error::io(metadata_file, e))?;
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("line {}", lineno + 1);
        let row: MetadataRow =
            serde_json::from_str(line).map_err(|e| Error::ingestion(metadata_file, loc(), e.to_string()))?;
        if let Some(prev) = seen.insert(row.id.clone(), lineno + 1) {
            return Err(Error::ingestion(
                metadata_file,
                loc(),
                format!("duplicate sample id {:?} (first on line {prev})", row.id),
            ));
        }
        let oracle_label = match row.label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => {
                return Err(Error::ingestion(
                    metadata_file,
                    loc(),
                    format!("label {l} is neither -1 nor a class index"),
                ))
            }
        };
        records.push(SampleRecord {
            sample_id: row.id,
            embedding_index: records.len(),
            oracle_label,
            image_ref: row.image,
        });
    }
    if records.len() != embeddings.rows() {
        return Err(Error::ingestion(
            metadata_file,
            format!("line {}", text.lines().count()),
            format!(
                "metadata has {} rows but embedding header declares N={}",
                records.len(),
                embeddings.rows()
            ),
        ));
    }
    Dataset::new(embeddings, records)
}

pub fn write_dataset(dataset: &Dataset, embedding_file: &Path, metadata_file: &Path) -> Result<()> {
    embedding_file::write(embedding_file, &dataset.embeddings, Dtype::F32)?;
    let mut out = String::new();
    for r in &dataset.records {
        let row = MetadataRow {
            id: r.sample_id.clone(),
            label: r.oracle_label.map_or(-1, |l| l as i64),
            image: r.image_ref.clone(),
        };
        out.push_str(&serde_json::to_string(&row).expect("metadata row serializes"));
        out.push('\n');
    }
    let mut f = fs::File::create(metadata_file).map_err(|e| Error::io(metadata_file, e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(metadata_file, e))
}

/// File layout of a data directory: training pool, ID-only test split and
/// prompt embeddings (rows in catalog order, `id` holding the class name).
#[derive(Debug, Clone)]
pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub const POOL: &'static str = "pool";
    pub const TEST: &'static str = "test";
    pub const PROMPTS: &'static str = "prompts";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn embedding_path(&self, stem: &str) -> PathBuf {
        self.root.join(format!("{stem}.emb"))
    }

    pub fn metadata_path(&self, stem: &str) -> PathBuf {
        self.root.join(format!("{stem}.jsonl"))
    }

    pub fn load(&self, stem: &str) -> Result<Dataset> {
        load_dataset(&self.embedding_path(stem), &self.metadata_path(stem))
    }

    pub fn write(&self, stem: &str, dataset: &Dataset) -> Result<()> {
        write_dataset(dataset, &self.embedding_path(stem), &self.metadata_path(stem))
    }

    pub fn has(&self, stem: &str) -> bool {
        self.embedding_path(stem).exists() && self.metadata_path(stem).exists()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelState {
    Unlabeled,
    Id(usize),
    NonTarget,
}

impl LabelState {
    pub fn is_id(self) -> bool {
        matches!(self, LabelState::Id(_))
    }
}

impl fmt::Display for LabelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelState::Unlabeled => f.write_str("unlabeled"),
            LabelState::Id(c) => write!(f, "class:{c}"),
            LabelState::NonTarget => f.write_str("non-target"),
        }
    }
}

impl FromStr for LabelState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-target" => Ok(LabelState::NonTarget),
            "unlabeled" => Ok(LabelState::Unlabeled),
            _ => s
                .strip_prefix("class:")
                .and_then(|c| c.parse().ok())
                .map(LabelState::Id)
                .ok_or_else(|| Error::Parameter(format!("malformed label {s:?}"))),
        }
    }
}

impl Serialize for LabelState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Partition of sample indices into unlabeled and labeled pools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    unlabeled: BTreeSet<usize>,
    labeled: BTreeMap<usize, LabelState>,
    round: usize,
}

impl PoolState {
    pub fn new(n: usize) -> Self {
        Self {
            unlabeled: (0..n).collect(),
            labeled: BTreeMap::new(),
            round: 0,
        }
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn labeled(&self) -> &BTreeMap<usize, LabelState> {
        &self.labeled
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn len(&self) -> usize {
        self.unlabeled.len() + self.labeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, i: usize) -> LabelState {
        self.labeled.get(&i).copied().unwrap_or(LabelState::Unlabeled)
    }

    /// Moves every labeled sample out of the unlabeled pool and advances the round.
    pub fn commit_labels(&self, labels: &BTreeMap<usize, LabelState>) -> Result<PoolState> {
        let mut next = self.clone();
        for (&i, &state) in labels {
            if state == LabelState::Unlabeled {
                return Err(Error::Consistency(format!("sample {i} committed as unlabeled")));
            }
            if self.labeled.contains_key(&i) {
                return Err(Error::Consistency(format!("sample {i} is already labeled")));
            }
            if !next.unlabeled.remove(&i) {
                return Err(Error::Consistency(format!("unknown sample {i}")));
            }
            next.labeled.insert(i, state);
        }
        next.round += 1;
        Ok(next)
    }

    pub fn check_partition(&self, n: usize) -> bool {
        self.unlabeled.len() + self.labeled.len() == n
            && self
                .unlabeled
                .iter()
                .all(|i| !self.labeled.contains_key(i) && *i < n)
            && self.labeled.keys().all(|i| *i < n)
    }
}

/// Resolves string sample ids to pool indices.
pub fn resolve_labels(
    dataset: &Dataset,
    labels: &BTreeMap<String, LabelState>,
) -> Result<BTreeMap<usize, LabelState>> {
    labels
        .iter()
        .map(|(id, s)| {
            dataset
                .index_of(id)
                .map(|i| (i, *s))
                .ok_or_else(|| Error::Consistency(format!("unknown sample id {id:?}")))
        })
        .collect()
}
