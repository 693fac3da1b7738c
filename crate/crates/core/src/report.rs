//! Report files: JSON-lines (header line then one round per line), the
//! per-round CSV and a markdown table.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{ExperimentReport, QueryRoundRecord, ReportHeader};

pub const CSV_HEADER: &str = "round,strategy,seed,qp,aqr,macc";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(ReportHeader),
    Round(QueryRoundRecord),
}

fn strip(record: &QueryRoundRecord, timings: bool) -> QueryRoundRecord {
    let mut r = record.clone();
    if !timings {
        r.wall_time = None;
    }
    r
}

/// Streams a report to `<path>.partial`, one flushed line per round, and
/// renames it over `path` on [`ReportWriter::finish`]. A crashed run leaves
/// its completed rounds in the partial file.
pub struct ReportWriter {
    target: PathBuf,
    partial: PathBuf,
    file: File,
    timings: bool,
}

impl ReportWriter {
    pub fn create(path: &Path, header: &ReportHeader, timings: bool) -> Result<Self> {
        let partial = partial_path(path);
        let file = File::create(&partial).map_err(|e| Error::io(&partial, e))?;
        let mut w = Self {
            target: path.to_path_buf(),
            partial,
            file,
            timings,
        };
        w.write_line(&Line::Header(header.clone()))?;
        Ok(w)
    }

    fn write_line(&mut self, line: &Line) -> Result<()> {
        let mut text = serde_json::to_string(line).expect("report line serializes");
        text.push('\n');
        self.file
            .write_all(text.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.partial, e))
    }

    pub fn append(&mut self, record: &QueryRoundRecord) -> Result<()> {
        let r = strip(record, self.timings);
        self.write_line(&Line::Round(r))
    }

    pub fn finish(self) -> Result<()> {
        self.file.sync_all().map_err(|e| Error::io(&self.partial, e))?;
        fs::rename(&self.partial, &self.target).map_err(|e| Error::io(&self.target, e))
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_jsonl(report: &ExperimentReport, timings: bool) -> String {
    let mut out = serde_json::to_string(&Line::Header(report.header.clone())).expect("serializes");
    out.push('\n');
    for r in &report.rounds {
        out.push_str(&serde_json::to_string(&Line::Round(strip(r, timings))).expect("serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl(path: &Path) -> Result<ExperimentReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut rounds = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| Error::ingestion(path, format!("line {}", n + 1), e.to_string()))?;
        match parsed {
            Line::Header(h) if header.is_none() => header = Some(h),
            Line::Header(_) => {
                return Err(Error::ingestion(
                    path,
                    format!("line {}", n + 1),
                    "second header line",
                ))
            }
            Line::Round(r) => rounds.push(r),
        }
    }
    let header = header.ok_or_else(|| Error::ingestion(path, "line 1", "missing header line"))?;
    Ok(ExperimentReport { header, rounds })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

pub fn csv_rows(report: &ExperimentReport) -> Vec<String> {
    report
        .rounds
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{:.6},{},{}",
                r.round,
                report.header.strategy,
                report.header.seed,
                r.qp,
                opt(r.aqr, 6),
                opt(r.macc, 6)
            )
        })
        .collect()
}

pub fn to_csv<'a>(reports: impl IntoIterator<Item = &'a ExperimentReport>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for report in reports {
        for row in csv_rows(report) {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

pub fn to_markdown(report: &ExperimentReport) -> String {
    let mut out = format!(
        "strategy: {} | seed: {} | pool: {}\n\n| round | queried | id | ood | qp | aqr | macc |\n|---|---|---|---|---|---|---|\n",
        report.header.strategy, report.header.seed, report.header.pool_size
    );
    for r in &report.rounds {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {:.3} | {} | {} |\n",
            r.round,
            r.query.len(),
            r.id_hits,
            r.ood_hits,
            r.qp,
            opt(r.aqr, 3),
            opt(r.macc, 3)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::orchestrator::Strategy;

    fn report() -> ExperimentReport {
        let round = |t: usize, qp: f64| QueryRoundRecord {
            round: t,
            query: vec![format!("s{t}")],
            labels: vec![crate::data::LabelState::Id(0)],
            id_hits: 1,
            ood_hits: 0,
            qp,
            aqr: Some(0.1 * t as f64),
            macc: Some(1.0 / 3.0),
            candidates: 7,
            loss_trace: vec![0.1 + 0.2, 1e-300],
            wall_time: Some(1.5),
        };
        ExperimentReport {
            header: ReportHeader {
                strategy: Strategy::Random,
                seed: 4,
                pool_size: 10,
                id_total: Some(5),
                sgd_momentum: 0.0,
                config: ExperimentConfig::default(),
            },
            rounds: vec![round(1, 0.78), round(2, 2.0 / 3.0)],
        }
    }

    #[test]
    fn jsonl_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let r = report();
        fs::write(&path, to_jsonl(&r, true)).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), r);

        fs::write(&path, to_jsonl(&r, false)).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert!(back.rounds.iter().all(|x| x.wall_time.is_none()));
    }

    #[test]
    fn streamed_file_matches_batch_rendering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let r = report();
        let mut w = ReportWriter::create(&path, &r.header, false).unwrap();
        w.append(&r.rounds[0]).unwrap();
        let partial = fs::read_to_string(dir.path().join("r.jsonl.partial")).unwrap();
        assert_eq!(partial.lines().count(), 2);
        assert!(!path.exists());
        w.append(&r.rounds[1]).unwrap();
        w.finish().unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), to_jsonl(&r, false));
    }

    #[test]
    fn rejects_headerless_and_double_header_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let text = to_jsonl(&report(), false);
        let rounds_only: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        fs::write(&path, rounds_only).unwrap();
        assert!(read_jsonl(&path).is_err());
        let first = text.lines().next().unwrap();
        fs::write(&path, format!("{first}\n{text}")).unwrap();
        assert!(matches!(read_jsonl(&path), Err(Error::Ingestion { location, .. }) if location == "line 2"));
    }

    #[test]
    fn csv_and_markdown_formatting() {
        let r = report();
        assert_eq!(
            to_csv([&r]),
            "round,strategy,seed,qp,aqr,macc\n1,random,4,0.780000,0.100000,0.333333\n2,random,4,0.666667,0.200000,0.333333\n"
        );
        let md = to_markdown(&r);
        assert!(md.contains("| 1 | 1 | 1 | 0 | 0.780 | 0.100 | 0.333 |"), "{md}");
    }
}
