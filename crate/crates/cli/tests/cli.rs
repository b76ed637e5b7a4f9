use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use census_core::sim::{parse_truth_csv, TRUTH_FILE};
use serde_json::Value;

fn census(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_census"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut input = child.stdin.take().unwrap();
        if let Some(text) = stdin {
            input.write_all(text.as_bytes()).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = census(args, None);
    assert_eq!(
        out.status.code(),
        Some(0),
        "census {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const PERFECT: &str = "\
[sim]
individuals = 15
cameras = 6
study_days = 8

[oracle]
human_error = 0.0
human_incomparable = 0.0
";

const NOISY: &str = "\
[sim]
individuals = 10
cameras = 5
study_days = 6

[oracle]
verifier_flip = 0.3

[lca]
max_algo_reviews_per_pair = 1
";

/// simulate, ingest and filter into `dir/db`; returns (db, data dir, config).
fn prepared(dir: &Path, config_text: &str, seed: &str) -> (String, String, String) {
    let config = dir.join("run.toml");
    std::fs::write(&config, config_text).unwrap();
    let data = dir.join("data");
    let db = dir.join("db");
    ok(&["simulate", "--out", s(&data), "--config", s(&config), "--seed", seed]);
    ok(&[
        "ingest",
        "--manifest",
        s(&data.join("manifest.jsonl")),
        "--cameras",
        s(&data.join("cameras.json")),
        "--db",
        s(&db),
    ]);
    ok(&["filter", "--db", s(&db), "--config", s(&config)]);
    (s(&db).into(), s(&data).into(), s(&config).into())
}

fn digest(stdout: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("sha256 "))
        .expect("digest line")
        .to_string()
}

#[test]
fn help_succeeds_and_bad_flags_are_rejected() {
    assert_eq!(census(&["--help"], None).status.code(), Some(0));
    assert_eq!(census(&["filter", "--bogus"], None).status.code(), Some(1));
    assert_eq!(census(&["ingest"], None).status.code(), Some(1));
    assert_eq!(census(&["cluster", "--mode", "telepathy"], None).status.code(), Some(1));
}

#[test]
fn filtering_an_empty_dataset_reports_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    let cameras = dir.path().join("c.json");
    std::fs::write(&manifest, "").unwrap();
    std::fs::write(&cameras, "[]").unwrap();
    let db = dir.path().join("db");
    let out = ok(&["filter", "--manifest", s(&manifest), "--cameras", s(&cameras), "--db", s(&db), "--json"]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert!(report["final_ids"].as_array().unwrap().is_empty());
    for stage in report["stages"].as_array().unwrap() {
        assert_eq!(stage["input"], 0);
        assert_eq!(stage["output"], 0);
    }
}

#[test]
fn full_pipeline_recovers_the_seen_individuals() {
    let dir = tempfile::tempdir().unwrap();
    let (db, data, config) = prepared(dir.path(), PERFECT, "5");
    let run: Value = serde_json::from_str(&ok(&["cluster", "--db", &db, "--config", &config, "--seed", "5", "--json"])).unwrap();
    assert_eq!(run["outcome"], "converged");
    ok(&["estimate", "--db", &db, "--config", &config]);
    let report_path = dir.path().join("report.json");
    let geojson_path = dir.path().join("sightings.geojson");
    ok(&["report", "--db", &db, "--out", s(&report_path), "--geojson", s(&geojson_path)]);

    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let truth = parse_truth_csv(std::fs::File::open(Path::new(&data).join(TRUTH_FILE)).unwrap()).unwrap();
    let seen: BTreeSet<&str> = report["funnel"]["final_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|id| truth[id.as_str().unwrap()].as_str())
        .collect();
    assert_eq!(report["run"]["cluster_count"], seen.len());
    assert_eq!(report["evaluation"]["f1"], 1.0);
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["funnel", "run", "estimate", "individuals", "strategies", "evaluation"] {
        assert!(keys.contains(&k), "missing {k}");
    }
    assert!(report["estimate"]["capture"].is_object());

    let geojson: Value = serde_json::from_str(&std::fs::read_to_string(&geojson_path).unwrap()).unwrap();
    let encounters: usize = report["individuals"]["per_cluster"]
        .as_object()
        .unwrap()
        .values()
        .map(|r| r["encounters"].as_u64().unwrap() as usize)
        .sum();
    assert_eq!(geojson["features"].as_array().unwrap().len(), encounters);
}

#[test]
fn seeded_clustering_gives_identical_report_digests() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _, config) = prepared(dir.path(), NOISY, "7");
    ok(&["cluster", "--db", &db, "--config", &config, "--mode", "sim", "--seed", "7"]);
    let first = digest(&ok(&["report", "--db", &db]));
    ok(&["cluster", "--db", &db, "--config", &config, "--mode", "sim", "--seed", "7"]);
    let second = digest(&ok(&["report", "--db", &db]));
    assert_eq!(first, second);
    ok(&["cluster", "--db", &db, "--config", &config, "--mode", "sim", "--seed", "8"]);
    let third = digest(&ok(&["report", "--db", &db]));
    assert_ne!(first, third);
}

#[test]
fn interactive_runs_suspend_at_end_of_input_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _, config) = prepared(dir.path(), NOISY, "3");
    let out = census(&["cluster", "--db", &db, "--config", &config, "--mode", "interactive", "--json"], Some(""));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let first: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(first["outcome"], "suspended");
    assert!(String::from_utf8_lossy(&out.stderr).contains("[s]ame"));

    let answers = "d\n".repeat(5_000);
    let out = census(&["cluster", "--db", &db, "--mode", "interactive", "--resume", "--json"], Some(&answers));
    assert_eq!(out.status.code(), Some(0));
    let done: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(done["outcome"], "converged");
    assert!(done["run"]["total_reviews"].as_u64() > first["run"]["total_reviews"].as_u64());
    assert!(done["run"]["human_reviews"].as_u64().unwrap() > 0);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db");
    let missing = census(
        &["ingest", "--manifest", "/nonexistent/m.jsonl", "--cameras", "/nonexistent/c.json", "--db", s(&db)],
        None,
    );
    assert_eq!(missing.status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[filter]\nca_threshold = 1.5\n").unwrap();
    let out = census(&["simulate", "--out", s(&dir.path().join("x")), "--config", s(&bad)], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("filter.ca_threshold"));

    let out = census(&["cluster", "--db", s(&db)], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("census ingest"));
}

#[test]
fn corrupt_state_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db");
    std::fs::create_dir_all(&db).unwrap();
    std::fs::write(db.join("dataset.json"), "not json").unwrap();
    let out = census(&["filter", "--db", s(&db)], None);
    assert_eq!(out.status.code(), Some(2));
}
