//! Experiment configuration and class catalog, read from one TOML key-value file.
//!
//! ```toml
//! id_class_names = ["LYM", "NORM", "TUM"]
//! ood_class_names = ["ADI", "BACK", "DEB", "MUC", "MUS", "STR"]
//! task_description = "colorectal cancer tissue classification"
//! budget_L = 50
//! rounds_R = 5
//! percentile_M = 25
//! batches_B = 10
//!
//! [training]
//! epochs = 30
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "An H&E image of {class}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub id_class_names: Vec<String>,
    pub ood_class_names: Vec<String>,
    pub task_description: String,
}

impl ClassCatalog {
    pub fn id_count(&self) -> usize {
        self.id_class_names.len()
    }

    /// ID names followed by OOD names, the order prompt embeddings follow.
    pub fn all_names(&self) -> impl Iterator<Item = &str> {
        self.id_class_names
            .iter()
            .chain(&self.ood_class_names)
            .map(String::as_str)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.id_class_names.len() < 2 {
            problems.push(format!(
                "id_class_names: need at least 2 ID classes, got {}",
                self.id_class_names.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for name in self.all_names() {
            if !seen.insert(name) {
                let key = if self.id_class_names.iter().any(|n| n == name) {
                    "id_class_names"
                } else {
                    "ood_class_names"
                };
                problems.push(format!("{key}: duplicate class name {name:?}"));
            }
        }
        problems
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeSpace {
    ProbeHidden,
    RawEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupStrategy {
    /// Zero-shot ID filtering followed by kmeans++ representatives.
    VidsCluster,
    /// Zero-shot ID filtering followed by a uniform draw from the candidates.
    VidsOnly,
    Random,
}

macro_rules! snake_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const NAMES: &'static [&'static str] = &[$($name),+];
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    _ => Err(Error::Parameter(format!(
                        "{s:?} is not one of {:?}", Self::NAMES
                    ))),
                }
            }
        }
    };
}

snake_enum!(PrototypeSpace { ProbeHidden => "probe_hidden", RawEmbedding => "raw_embedding" });
snake_enum!(WarmupStrategy {
    VidsCluster => "vids_cluster",
    VidsOnly => "vids_only",
    Random => "random",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_every: 20,
            weight_decay: 8e-4,
            hidden_dim: 256,
            batch_size: 64,
        }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub catalog: ClassCatalog,
    pub budget_L: usize,
    pub rounds_R: usize,
    pub percentile_M: f64,
    pub batches_B: usize,
    pub tau: f64,
    pub seed: u64,
    pub training: TrainingConfig,
    pub feature_space_for_prototypes: PrototypeSpace,
    pub use_ood_centroid_in_pis: bool,
    pub warmup_strategy: WarmupStrategy,
    /// Adds a (C+1)-th "non-target" output trained on OOD-labeled samples.
    pub train_with_ood_class: bool,
    /// Run Lloyd iterations after kmeans++ seeding.
    pub refine: bool,
    pub prompt_template: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            catalog: ClassCatalog {
                id_class_names: Vec::new(),
                ood_class_names: Vec::new(),
                task_description: String::new(),
            },
            budget_L: 50,
            rounds_R: 5,
            percentile_M: 25.0,
            batches_B: 10,
            tau: 0.01,
            seed: 0,
            training: TrainingConfig::default(),
            feature_space_for_prototypes: PrototypeSpace::ProbeHidden,
            use_ood_centroid_in_pis: false,
            warmup_strategy: WarmupStrategy::VidsCluster,
            train_with_ood_class: false,
            refine: true,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_string(),
        }
    }
}

/// `(key, description)` for every accepted config key.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    (
        "id_class_names",
        "list of C >= 2 target class names, in prompt order",
    ),
    (
        "ood_class_names",
        "list of K >= 0 non-target class names, after the ID names",
    ),
    (
        "task_description",
        "free-text task used in the OOD-suggestion question",
    ),
    ("budget_L", "samples queried per round (default 50)"),
    ("rounds_R", "number of query rounds (default 5)"),
    (
        "percentile_M",
        "percent of the unlabeled pool kept as ID candidates, in (0, 100] (default 25)",
    ),
    (
        "batches_B",
        "random batches for entropy-guided sampling, 1 <= B <= L (default 10)",
    ),
    ("tau", "zero-shot softmax temperature > 0 (default 0.01)"),
    ("seed", "master seed for every random stream (default 0)"),
    (
        "feature_space_for_prototypes",
        "probe_hidden | raw_embedding (default probe_hidden)",
    ),
    (
        "use_ood_centroid_in_pis",
        "exclude samples nearest the non-target centroid (default false)",
    ),
    (
        "warmup_strategy",
        "vids_cluster | vids_only | random (default vids_cluster)",
    ),
    (
        "train_with_ood_class",
        "train an extra non-target output (default false)",
    ),
    ("refine", "Lloyd refinement after kmeans++ seeding (default true)"),
    ("prompt_template", "prompt text with one {class} placeholder"),
    ("training.epochs", "probe epochs per round (default 30)"),
    ("training.lr", "initial SGD learning rate (default 1e-3)"),
    ("training.lr_decay_factor", "step decay factor (default 0.1)"),
    ("training.lr_decay_every", "epochs between decays (default 20)"),
    ("training.weight_decay", "L2 weight decay (default 8e-4)"),
    (
        "training.hidden_dim",
        "hidden units of the probe head (default 256)",
    ),
    ("training.batch_size", "mini-batch size (default 64)"),
];

pub fn config_keys_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys:\n");
    for (k, d) in CONFIG_KEYS {
        out.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    out
}

struct Reader<'a> {
    problems: Vec<String>,
    prefix: &'a str,
}

impl Reader<'_> {
    fn key(&self, k: &str) -> String {
        if self.prefix.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.prefix)
        }
    }

    fn uint(&mut self, v: &toml::Value, k: &str, slot: &mut usize) {
        match v.as_integer() {
            Some(i) if i >= 0 => *slot = i as usize,
            _ => self.problems.push(format!(
                "{}: expected a non-negative integer, got {v}",
                self.key(k)
            )),
        }
    }

    fn real(&mut self, v: &toml::Value, k: &str, slot: &mut f64) {
        match v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
            Some(x) if x.is_finite() => *slot = x,
            _ => self
                .problems
                .push(format!("{}: expected a number, got {v}", self.key(k))),
        }
    }

    fn boolean(&mut self, v: &toml::Value, k: &str, slot: &mut bool) {
        match v.as_bool() {
            Some(b) => *slot = b,
            None => self
                .problems
                .push(format!("{}: expected true or false, got {v}", self.key(k))),
        }
    }

    fn string(&mut self, v: &toml::Value, k: &str, slot: &mut String) {
        match v.as_str() {
            Some(s) => *slot = s.to_string(),
            None => self
                .problems
                .push(format!("{}: expected a string, got {v}", self.key(k))),
        }
    }

    fn strings(&mut self, v: &toml::Value, k: &str, slot: &mut Vec<String>) {
        match v.as_array().and_then(|a| {
            a.iter()
                .map(|x| x.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
        }) {
            Some(list) => *slot = list,
            None => self
                .problems
                .push(format!("{}: expected a list of strings, got {v}", self.key(k))),
        }
    }

    fn parsed<T: FromStr<Err = Error>>(&mut self, v: &toml::Value, k: &str, slot: &mut T) {
        match v.as_str().map(str::parse::<T>) {
            Some(Ok(x)) => *slot = x,
            Some(Err(e)) => self.problems.push(format!("{}: {e}", self.key(k))),
            None => self
                .problems
                .push(format!("{}: expected a string, got {v}", self.key(k))),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
        let mut cfg = ExperimentConfig::default();
        let problems = cfg.apply_table(&table);
        let mut problems = problems;
        problems.extend(cfg.validate());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Applies overrides from a table with the same keys as the config file
    /// and re-validates. Returns every problem found.
    pub fn with_overrides(&self, table: &toml::Table) -> Result<Self> {
        let mut cfg = self.clone();
        let mut problems = cfg.apply_table(table);
        problems.extend(cfg.validate());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    fn apply_table(&mut self, table: &toml::Table) -> Vec<String> {
        let mut r = Reader {
            problems: Vec::new(),
            prefix: "",
        };
        for (k, v) in table {
            match k.as_str() {
                "id_class_names" => r.strings(v, k, &mut self.catalog.id_class_names),
                "ood_class_names" => r.strings(v, k, &mut self.catalog.ood_class_names),
                "task_description" => r.string(v, k, &mut self.catalog.task_description),
                "budget_L" => r.uint(v, k, &mut self.budget_L),
                "rounds_R" => r.uint(v, k, &mut self.rounds_R),
                "percentile_M" => r.real(v, k, &mut self.percentile_M),
                "batches_B" => r.uint(v, k, &mut self.batches_B),
                "tau" => r.real(v, k, &mut self.tau),
                "seed" => {
                    let mut s = 0usize;
                    r.uint(v, k, &mut s);
                    self.seed = s as u64;
                }
                "feature_space_for_prototypes" => r.parsed(v, k, &mut self.feature_space_for_prototypes),
                "use_ood_centroid_in_pis" => r.boolean(v, k, &mut self.use_ood_centroid_in_pis),
                "warmup_strategy" => r.parsed(v, k, &mut self.warmup_strategy),
                "train_with_ood_class" => r.boolean(v, k, &mut self.train_with_ood_class),
                "refine" => r.boolean(v, k, &mut self.refine),
                "prompt_template" => r.string(v, k, &mut self.prompt_template),
                "training" => match v.as_table() {
                    Some(t) => {
                        let mut tr = Reader {
                            problems: Vec::new(),
                            prefix: "training",
                        };
                        let training = &mut self.training;
                        for (tk, tv) in t {
                            match tk.as_str() {
                                "epochs" => tr.uint(tv, tk, &mut training.epochs),
                                "lr" => tr.real(tv, tk, &mut training.lr),
                                "lr_decay_factor" => tr.real(tv, tk, &mut training.lr_decay_factor),
                                "lr_decay_every" => tr.uint(tv, tk, &mut training.lr_decay_every),
                                "weight_decay" => tr.real(tv, tk, &mut training.weight_decay),
                                "hidden_dim" => tr.uint(tv, tk, &mut training.hidden_dim),
                                "batch_size" => tr.uint(tv, tk, &mut training.batch_size),
                                _ => tr.problems.push(format!("training.{tk}: unknown key")),
                            }
                        }
                        r.problems.extend(tr.problems);
                    }
                    None => r.problems.push(format!("training: expected a table, got {v}")),
                },
                _ => r.problems.push(format!("{k}: unknown key")),
            }
        }
        r.problems
    }

    /// Every invariant violation, one message per offending key.
    pub fn validate(&self) -> Vec<String> {
        let mut p = self.catalog.validate();
        if self.rounds_R < 1 {
            p.push("rounds_R: must be >= 1".into());
        }
        if self.batches_B < 1 {
            p.push("batches_B: must be >= 1".into());
        }
        if self.budget_L < self.batches_B.max(1) {
            p.push(format!(
                "budget_L: must be >= batches_B ({}), got {}",
                self.batches_B, self.budget_L
            ));
        }
        if !(self.percentile_M > 0.0 && self.percentile_M <= 100.0) {
            p.push(format!(
                "percentile_M: must lie in (0, 100], got {}",
                self.percentile_M
            ));
        }
        if !(self.tau > 0.0) {
            p.push(format!("tau: must be > 0, got {}", self.tau));
        }
        if self.prompt_template.matches("{class}").count() != 1 {
            p.push("prompt_template: must contain exactly one {class} placeholder".into());
        }
        let t = &self.training;
        if t.epochs < 1 {
            p.push("training.epochs: must be >= 1".into());
        }
        if !(t.lr > 0.0) {
            p.push(format!("training.lr: must be > 0, got {}", t.lr));
        }
        if !(t.lr_decay_factor > 0.0) {
            p.push(format!(
                "training.lr_decay_factor: must be > 0, got {}",
                t.lr_decay_factor
            ));
        }
        if t.lr_decay_every < 1 {
            p.push("training.lr_decay_every: must be >= 1".into());
        }
        if !(t.weight_decay >= 0.0) {
            p.push(format!(
                "training.weight_decay: must be >= 0, got {}",
                t.weight_decay
            ));
        }
        if t.hidden_dim < 1 {
            p.push("training.hidden_dim: must be >= 1".into());
        }
        if t.batch_size < 1 {
            p.push("training.batch_size: must be >= 1".into());
        }
        p
    }

    /// Renders the config back into the file format.
    pub fn to_toml_string(&self) -> String {
        let list = |v: &[String]| {
            toml::Value::Array(v.iter().map(|s| toml::Value::String(s.clone())).collect()).to_string()
        };
        let t = &self.training;
        format!(
            "id_class_names = {}\n\
             ood_class_names = {}\n\
             task_description = {}\n\
             budget_L = {}\n\
             rounds_R = {}\n\
             percentile_M = {:?}\n\
             batches_B = {}\n\
             tau = {:?}\n\
             seed = {}\n\
             feature_space_for_prototypes = \"{}\"\n\
             use_ood_centroid_in_pis = {}\n\
             warmup_strategy = \"{}\"\n\
             train_with_ood_class = {}\n\
             refine = {}\n\
             prompt_template = {}\n\
             \n\
             [training]\n\
             epochs = {}\n\
             lr = {:?}\n\
             lr_decay_factor = {:?}\n\
             lr_decay_every = {}\n\
             weight_decay = {:?}\n\
             hidden_dim = {}\n\
             batch_size = {}\n",
            list(&self.catalog.id_class_names),
            list(&self.catalog.ood_class_names),
            toml::Value::String(self.catalog.task_description.clone()),
            self.budget_L,
            self.rounds_R,
            self.percentile_M,
            self.batches_B,
            self.tau,
            self.seed,
            self.feature_space_for_prototypes,
            self.use_ood_centroid_in_pis,
            self.warmup_strategy,
            self.train_with_ood_class,
            self.refine,
            toml::Value::String(self.prompt_template.clone()),
            t.epochs,
            t.lr,
            t.lr_decay_factor,
            t.lr_decay_every,
            t.weight_decay,
            t.hidden_dim,
            t.batch_size,
        )
    }
}
