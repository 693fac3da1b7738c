//! Command-line front end. `openpath --help` lists the subcommands; every
//! experiment config key is listed at the end of the help text.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use crate::config::{config_keys_help, ExperimentConfig};
use crate::data::DataDir;
use crate::error::{Error, Result};
use crate::orchestrator::{
    mean_by_round, run_comparison, run_experiment_with, Experiment, ExperimentData, OracleLabeler, Strategy,
};
use crate::report::{self, ReportWriter};
use crate::service::{self, ServiceOptions};
use crate::synth::{self, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "openpath",
    version,
    about = "Open-set active learning over precomputed embeddings"
)]
#[command(after_help = after_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn after_help() -> String {
    config_keys_help()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Md,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark directory.
    Synth {
        /// Generator parameters (TOML); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Experiment config to copy into the output; the benchmark's own
        /// settings when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the generator seed from `--spec`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one strategy with oracle labels and write a JSON-lines report.
    Run {
        /// Defaults to `<data>/experiment.toml`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "openpath")]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Keep per-round wall time in the report (makes it non-reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Run several strategies under several seeds and write a per-round CSV.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "openpath,random,entropy")]
        strategies: Vec<Strategy>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Render a JSON-lines report as CSV or markdown on stdout.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: ReportFormat,
    },
    /// Serve the annotation API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory that image references in the metadata resolve against.
        #[arg(long)]
        patches: Option<PathBuf>,
        /// Session journals; sessions found here are restored on startup.
        #[arg(long)]
        state_dir: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Template(_) => EXIT_CONFIG,
        Error::Ingestion { .. } | Error::Io { .. } | Error::Shape(_) => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Degenerate(_) => "degenerate",
        Error::Parameter(_) => "parameter",
        Error::Shape(_) => "shape",
        Error::Ingestion { .. } => "ingestion",
        Error::Consistency(_) => "consistency",
        Error::Config(_) => "config",
        Error::Template(_) => "template",
        Error::Training(_) => "training",
        Error::MissingClass(_) => "missing_class",
        Error::Metric(_) => "metric",
        Error::Io { .. } => "io",
    }
}

/// One-line JSON rendering of an error for stderr.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({
        "error": error_kind(e),
        "message": e.to_string(),
        "exit_code": exit_code(e),
    })
    .to_string()
}

fn load_config(config: Option<&Path>, data: &Path) -> Result<ExperimentConfig> {
    let path = config.map_or_else(|| data.join("experiment.toml"), Path::to_path_buf);
    ExperimentConfig::from_file(&path)
}

fn load_data(config: &ExperimentConfig, data: &Path) -> Result<Arc<ExperimentData>> {
    Ok(Arc::new(ExperimentData::load(
        &DataDir::new(data),
        &config.catalog,
    )?))
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            spec,
            config,
            out,
            seed,
        } => {
            let mut spec = match spec {
                Some(p) => SynthSpec::from_file(&p)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let config = match config {
                Some(p) => ExperimentConfig::from_file(&p)?,
                None => spec.experiment_config(),
            };
            let data = synth::generate(&spec)?;
            data.write(&out, &config)?;
            println!(
                "wrote {} pool / {} test samples to {}",
                data.pool.len(),
                data.test.len(),
                out.display()
            );
            Ok(())
        }
        Command::Run {
            config,
            data,
            strategy,
            out,
            seed,
            timings,
        } => {
            let mut cfg = load_config(config.as_deref(), &data)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = load_data(&cfg, &data)?;
            let header = Experiment::new(cfg.clone(), strategy, Arc::clone(&ds))?.header();
            let mut writer = ReportWriter::create(&out, &header, timings)?;
            let mut labeler = OracleLabeler {
                id_count: ds.id_count(),
            };
            let report = run_experiment_with(&cfg, ds, &mut labeler, strategy, |r| {
                info!("round {} qp={:.3} macc={:?}", r.round, r.qp, r.macc);
                writer.append(r)
            })?;
            writer.finish()?;
            print!("{}", report::to_markdown(&report));
            Ok(())
        }
        Command::Compare {
            config,
            data,
            strategies,
            seeds,
            out,
            jobs,
        } => {
            let cfg = load_config(config.as_deref(), &data)?;
            let ds = load_data(&cfg, &data)?;
            let runs = run_comparison(&cfg, ds, &strategies, &seeds, jobs)?;
            report::write_atomic(&out, report::to_csv(runs.iter().map(|r| &r.report)).as_bytes())?;
            println!("| strategy | round | qp | aqr | macc |\n|---|---|---|---|---|");
            for s in &strategies {
                let reports: Vec<_> = runs
                    .iter()
                    .filter(|r| r.strategy == *s)
                    .map(|r| &r.report)
                    .collect();
                for (t, qp, aqr, macc) in mean_by_round(&reports) {
                    let f = |v: Option<f64>| v.map_or("NA".into(), |x| format!("{x:.3}"));
                    println!("| {s} | {t} | {qp:.3} | {} | {} |", f(aqr), f(macc));
                }
            }
            Ok(())
        }
        Command::Report { input, format } => {
            let r = report::read_jsonl(&input)?;
            match format {
                ReportFormat::Csv => print!("{}", report::to_csv([&r])),
                ReportFormat::Md => print!("{}", report::to_markdown(&r)),
            }
            Ok(())
        }
        Command::Serve {
            config,
            data,
            port,
            patches,
            state_dir,
        } => {
            let options = ServiceOptions {
                config,
                data,
                patches,
                state_dir,
            };
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::io("tokio runtime", e))?;
            rt.block_on(service::serve(options, port))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}
