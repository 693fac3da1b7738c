mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use openpath::config::CONFIG_KEYS;
use openpath::orchestrator::{ExperimentReport, QueryRoundRecord, ReportHeader};
use openpath::report::{to_jsonl, CSV_HEADER};

fn openpath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_openpath"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn benchmark(dir: &Path) {
    let out = openpath(&["synth", "--spec", s(&dir.join("spec.toml")), "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn small_spec_file(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    fs::write(
        dir.join("spec.toml"),
        "samples_per_class = 60\ntest_per_class = 30\ndim = 16\n",
    )
    .unwrap();
}

#[test]
fn run_is_reproducible_and_overwrites() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_spec_file(&data);
    benchmark(&data);

    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("b.jsonl");
    for out in [&a, &b, &a] {
        let r = openpath(&["run", "--data", s(&data), "--out", s(out), "--seed", "5"]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert!(!tmp.path().join("a.jsonl.partial").exists());

    let lines: Vec<&str> = std::str::from_utf8(&bytes).unwrap().lines().collect();
    assert_eq!(lines.len(), 1 + 5);
    assert!(lines[0].contains("\"kind\":\"header\""));
    assert!(lines[1..]
        .iter()
        .all(|l| l.contains("\"kind\":\"round\"") && !l.contains("wall_time")));

    let timed = tmp.path().join("t.jsonl");
    assert!(
        openpath(&["run", "--data", s(&data), "--out", s(&timed), "--timings"])
            .status
            .success()
    );
    assert!(fs::read_to_string(&timed).unwrap().contains("wall_time"));
}

#[test]
fn compare_writes_one_row_per_round_strategy_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_spec_file(&data);
    benchmark(&data);
    let csv = tmp.path().join("cmp.csv");
    let out = openpath(&[
        "compare",
        "--data",
        s(&data),
        "--strategies",
        "openpath,random",
        "--seeds",
        "0,1,2,3,4",
        "--out",
        s(&csv),
        "--jobs",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len() - 1, 2 * 5 * 5);
    assert!(lines[1].starts_with("1,openpath,0,"));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("| openpath | 5 |") && stdout.contains("| random | 1 |"));
}

#[test]
fn report_renders_markdown_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let config = common::small_config(&common::small_spec());
    let report = ExperimentReport {
        header: ReportHeader {
            strategy: openpath::Strategy::Openpath,
            seed: 0,
            pool_size: 1000,
            id_total: Some(300),
            sgd_momentum: 0.0,
            config,
        },
        rounds: vec![QueryRoundRecord {
            round: 1,
            query: vec!["a".into()],
            labels: Vec::new(),
            id_hits: 39,
            ood_hits: 11,
            qp: 0.78,
            aqr: Some(0.13),
            macc: None,
            candidates: 50,
            loss_trace: Vec::new(),
            wall_time: None,
        }],
    };
    let path = tmp.path().join("r.jsonl");
    fs::write(&path, to_jsonl(&report, false)).unwrap();

    let md = openpath(&["report", "--in", s(&path), "--format", "md"]);
    assert!(md.status.success());
    let md = String::from_utf8(md.stdout).unwrap();
    assert!(md.contains("| 1 | 1 | 39 | 11 | 0.780 | 0.130 | NA |"), "{md}");

    let csv = String::from_utf8(openpath(&["report", "--in", s(&path), "--format", "csv"]).stdout).unwrap();
    assert_eq!(csv, format!("{CSV_HEADER}\n1,openpath,0,0.780000,0.130000,NA\n"));
}

#[test]
fn help_documents_every_config_key() {
    let out = openpath(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for (key, _) in CONFIG_KEYS {
        assert!(help.contains(key), "{key} missing from --help");
    }
    for sub in ["synth", "run", "compare", "report", "serve"] {
        assert!(help.contains(sub));
    }
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

#[test]
fn failures_exit_nonzero_with_a_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_spec_file(&data);
    benchmark(&data);
    let out_path = tmp.path().join("x.jsonl");

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "budget_L = 0\ntau = -1\nwat = 3\n").unwrap();
    let out = openpath(&[
        "run",
        "--config",
        s(&bad),
        "--data",
        s(&data),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"], "config");
    let msg = err["message"].as_str().unwrap();
    for key in ["budget_L", "tau", "wat"] {
        assert!(msg.contains(key), "{msg}");
    }

    let out = openpath(&[
        "run",
        "--data",
        s(&tmp.path().join("nowhere")),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["exit_code"], 3);

    fs::write(data.join("pool.emb"), b"OPEBjunk").unwrap();
    let out = openpath(&["run", "--data", s(&data), "--out", s(&out_path)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "ingestion");
    assert!(!out_path.exists());

    let out = openpath(&[
        "run",
        "--data",
        s(&data),
        "--out",
        s(&out_path),
        "--strategy",
        "psychic",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
