use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use conceptprobe::corpus::{load_concepts, ConceptFormat};
use conceptprobe::lmclient::server::spawn_backend;
use conceptprobe::lmclient::{OracleBackend, OracleSpec};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conceptprobe")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn import_sample(dir: &Path) -> PathBuf {
    let out = dir.join("things_sample.jsonl");
    ok(&["import", "--input", s(&fixture("things_sample.tsv")), "--format", "things-tsv", "--output", s(&out)]);
    out
}

#[test]
fn import_round_trips_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let first = import_sample(dir.path());
    let second = dir.path().join("again.jsonl");
    let stdout = ok(&["import", "--input", s(&first), "--format", "jsonl", "--output", s(&second)]);
    assert!(stdout.contains("imported 8 concepts"));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    let set = load_concepts(&second, ConceptFormat::Jsonl).unwrap();
    let crepe = set.get("crepe").unwrap();
    assert_eq!(crepe.description, "a small very thin pancake");
    assert!(crepe.synonyms.contains("crape"));
}

#[test]
fn probe_run_then_markdown_report() {
    let dir = tempfile::tempdir().unwrap();
    let concepts = import_sample(dir.path());
    let records = dir.path().join("records.jsonl");
    ok(&[
        "probe", "run", "--concepts", s(&concepts), "--condition", "demo", "--n-demos", "3", "--runs", "2",
        "--out", s(&records),
    ]);
    let lines: Vec<Value> = std::fs::read_to_string(&records)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 16);
    assert!(lines.iter().all(|r| r["matched"] == Value::Bool(true)));

    let reports = dir.path().join("reports");
    ok(&["probe", "report", "--records", s(&records), "--out-dir", s(&reports), "--format", "markdown"]);
    let table = std::fs::read_to_string(reports.join("accuracy.md")).unwrap();
    assert!(table.contains("| oracle | 100.0 [100.0, 100.0] |"), "{table}");
}

#[test]
fn probe_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let concepts = import_sample(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "probe", "run", "--concepts", s(&concepts), "--condition", "mis", "--n-demos", "4", "--runs", "3",
            "--oracle-correct-prob", "0.5", "--oracle-seed", "9", "--out", s(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.jsonl"), run("b.jsonl"));
}

#[test]
fn run_config_writes_manifest_and_reuses_cache() {
    let dir = tempfile::tempdir().unwrap();
    import_sample(dir.path());
    let config = dir.path().join("run.json");
    std::fs::copy(fixture("run_config.json"), &config).unwrap();
    let first = ok(&["run", "--config", s(&config)]);
    assert!(first.contains("demo (probe): ok"), "{first}");
    let second = ok(&["run", "--config", s(&config)]);
    assert!(second.contains("backend calls: 0"), "{second}");

    let runs: Vec<_> = std::fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    assert_eq!(runs.len(), 1);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(runs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiments"].as_array().unwrap().len(), 2);
    assert!(runs[0].join("records.jsonl").exists());
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(
        &config,
        r#"{"backend": {"kind": "oracle", "spec": {}}, "datasets": {},
            "experiments": [{"kind": "probe", "name": "p", "concepts": "missing", "condition": "demo", "n_demos": 4}]}"#,
    )
    .unwrap();
    let out = cli(&["run", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(&config, "{not json").unwrap();
    assert_eq!(cli(&["run", "--config", s(&config)]).status.code(), Some(2));
}

#[test]
fn unreachable_backend_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let concepts = import_sample(dir.path());
    let out = cli(&[
        "probe", "run", "--backend", "http", "--url", "http://127.0.0.1:9", "--timeout-secs", "2", "--concepts",
        s(&concepts), "--condition", "nl", "--runs", "1", "--out", s(&dir.path().join("r.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let verify = cli(&["backend", "verify", "--url", "http://127.0.0.1:9", "--timeout-secs", "2"]);
    assert_eq!(verify.status.code(), Some(3));
}

#[test]
fn backend_verify_passes_against_oracle_server() {
    let dir = tempfile::tempdir().unwrap();
    let set = load_concepts(&import_sample(dir.path()), ConceptFormat::Jsonl).unwrap();
    let mut spec = OracleSpec::from_concepts(&set, 1.0, 0);
    spec.centroids.insert("object".into(), vec![0.5, -0.5, 1.0]);
    for c in set.iter() {
        spec.categories.insert(c.id.clone(), "object".into());
    }
    let server = spawn_backend("127.0.0.1:0", Arc::new(OracleBackend::new(spec).unwrap())).unwrap();
    let stdout = ok(&["backend", "verify", "--url", &server.url(), "--timeout-secs", "10"]);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    assert!(stdout.contains("oracle conforms"), "{stdout}");
}

#[test]
fn bench_mc_and_minimal_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let mc = dir.path().join("mc.csv");
    let stdout = ok(&["bench", "mc", "--items", s(&fixture("mc_items.jsonl")), "--task", "csqa", "--out", s(&mc)]);
    assert!(stdout.contains("csqa: 2/2 correct"), "{stdout}");
    let csv = std::fs::read_to_string(&mc).unwrap();
    assert!(csv.starts_with("item,chosen,gold,correct,scores\n0,0,0,true,"), "{csv}");

    let pairs = dir.path().join("pairs.csv");
    let stdout = ok(&["bench", "pairs", "--pairs", s(&fixture("minimal_pairs.jsonl")), "--out", s(&pairs)]);
    assert!(stdout.contains("2/2 pairs"), "{stdout}");

    let unknown = cli(&["bench", "mc", "--items", s(&fixture("mc_items.jsonl")), "--task", "nope", "--out", s(&mc)]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn protoqa_run_and_rescore_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("protoqa.jsonl");
    ok(&[
        "protoqa", "run", "--oracle-spec", s(&fixture("protoqa_oracle.json")), "--items",
        s(&fixture("protoqa_items.jsonl")), "--samples", "40", "--modes", "exact", "--out", s(&out),
    ]);
    let summary = std::fs::read_to_string(dir.path().join("protoqa_summary.csv")).unwrap();
    assert!(summary.starts_with("mode,metric,k,score,n_questions\n"), "{summary}");

    let results: Vec<Value> =
        std::fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(results.len(), 2);
    let ranked = results[0]["ranked"]["answers"].as_array().unwrap();
    assert_eq!(ranked[0], "keys");

    let rescored = dir.path().join("rescored.jsonl");
    ok(&[
        "protoqa", "score", "--results", s(&out), "--items", s(&fixture("protoqa_items.jsonl")), "--modes", "exact",
        "--out", s(&rescored),
    ]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&rescored).unwrap());
}
