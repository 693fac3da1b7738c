//! Open-set pool-based active learning over precomputed embeddings.
//!
//! The pool mixes target (ID) and non-target (OOD) samples. The first query
//! filters the pool with zero-shot prompt similarity and picks kmeans++
//! representatives; later queries keep the samples closest to ID class
//! prototypes and draw the most uncertain ones from random batches.
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! ```bash
//! cargo run --release --example synthetic_benchmark
//! cargo run --release --example warmup_selection
//! cargo run --release --example probe_training
//! cargo run --release --example dis_round
//! cargo run --release --example simulate
//! cargo run --release --example compare_strategies
//! cargo run --release --example warmup_ablation
//! cargo run --release --example annotation_session
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cluster;
pub mod config;
pub mod data;
pub mod dis;
pub mod error;
pub mod numerics;
pub mod orchestrator;
pub mod probe;
pub mod report;
pub mod service;
pub mod synth;
pub mod zero_shot;

pub use config::{ClassCatalog, ExperimentConfig, PrototypeSpace, WarmupStrategy};
pub use data::{Dataset, LabelState, PoolState, SampleRecord};
pub use error::{Error, Result};
pub use numerics::{Matrix, ProbVector};
pub use orchestrator::{
    run_experiment, run_upper_bound, Experiment, ExperimentData, ExperimentReport, Labeler, OracleLabeler,
    QueryRoundRecord, Strategy,
};
