use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/testbed/config.json")
}

fn faqrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faqrag"))
        .arg("--config")
        .arg(config())
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = faqrag(args);
    assert!(
        out.status.success(),
        "faqrag {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn artifact_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_string_lossy();
            n.ends_with(".run") || n.ends_with(".answers.jsonl")
        })
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn run_batch_is_byte_for_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        ok(&["run-batch", "--out", path(dir.path()), "--pipeline", "ib", "--pipeline", "rag-bm25", "--cutoff", "1", "--cutoff", "3"]);
    }
    let (fa, fb) = (artifact_files(a.path()), artifact_files(b.path()));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["ib.answers.jsonl", "ib.run", "rag-bm25.k1.answers.jsonl", "rag-bm25.k1.run", "rag-bm25.k3.answers.jsonl", "rag-bm25.k3.run"]
    );
    assert_eq!(fa, fb);
    let answers = std::fs::read_to_string(a.path().join("ib.answers.jsonl")).unwrap();
    assert_eq!(answers.lines().count(), 106);
}

#[test]
fn run_eval_compare_produces_the_seven_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let (run, eval, cmp) = (dir.path().join("run"), dir.path().join("eval"), dir.path().join("cmp"));
    ok(&["run-batch", "--out", path(&run)]);
    ok(&["eval", "--run", path(&run), "--out", path(&eval), "--format", "json"]);
    let eval_json = eval.join("eval.json");
    let table = ok(&["compare", path(&eval_json), "--out", path(&cmp)]);

    let header = table.lines().next().unwrap();
    assert_eq!(header.matches("Questions)").count(), 3);
    let rows: Vec<&str> = table.lines().skip(3).take_while(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 7, "{table}");
    assert!(rows[0].starts_with("Intent-Based (IB)"));
    assert!(rows.iter().any(|r| r.contains('*')));
    assert_eq!(std::fs::read_to_string(cmp.join("report.txt")).unwrap(), table);

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cmp.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["eval"]["systems"].as_array().unwrap().len(), 7);
    assert_eq!(report["comparison"]["systems"].as_array().unwrap().len(), 7);

    // A report compared against itself has no significant winner.
    let self_cmp = dir.path().join("self");
    let table = ok(&["compare", path(&eval_json), path(&eval_json), "--out", path(&self_cmp), "--format", "table"]);
    let rows: Vec<&str> = table.lines().skip(3).take_while(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 14);
    assert!(rows.iter().all(|r| !r.contains('*')), "{table}");
}

#[test]
fn eval_rejects_a_directory_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = faqrag(&["eval", "--run", path(dir.path()), "--out", path(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn bad_arguments_exit_nonzero() {
    assert!(!faqrag(&["run-batch", "--out", "/tmp/unused", "--pipeline", "oracle"]).status.success());
    assert!(!faqrag(&["run-batch", "--out", "/tmp/unused", "--cutoff", "0"]).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_faqrag"))
        .args(["--config", "/nonexistent/config.json", "index", "--out", "/tmp/unused"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/config.json"));
}

#[test]
fn index_writes_models() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["index", "--out", path(dir.path())]);
    assert!(stdout.contains("120 passages, 106 questions (known 84, inferred 12, out-of-KB 10)"), "{stdout}");
    let index: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("index.json")).unwrap()).unwrap();
    assert_eq!(index["doc_count"], 120);
    assert!(dir.path().join("intent.json").exists());
}

#[test]
fn search_and_ask() {
    let stdout = ok(&["search", "--cutoff", "2", "how many credits do I need to graduate"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(!lines.is_empty() && lines.len() <= 2);
    assert!(lines[0].trim_start().starts_with("1 "));

    let stdout = ok(&["ask", "--pipeline", "ib", "--format", "json", "what is the capital of mongolia"]);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["answer"]["answered"], false);
    assert_eq!(v["answer"]["text"], faqrag_core::FALLBACK_ANSWER);

    assert!(!faqrag(&["search", "--pipeline", "ib", "anything"]).status.success());
}

#[test]
fn augment_requires_a_paraphraser() {
    let out = faqrag(&["augment", "--out", "/tmp/unused.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("paraphraser"));
}
