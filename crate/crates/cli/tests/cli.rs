use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tkg_rag::llm::stub::StubServer;

fn tkg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tkg-rag"))
        .args(args)
        .current_dir(dir)
        .env_remove("TKG_RAG_ENDPOINT")
        .env_remove("TKG_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn mine_writes_rules_with_params_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = tkg(dir.path(), &["mine", "--walks", "200", "--seed", "1", "--out", "m"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rules = json(&dir.path().join("m/rules.json"));
    assert_eq!(rules["params"]["num_walks"], 200);
    assert_eq!(rules["params"]["seed"], 1);
    assert!(!rules["rules"].as_array().unwrap().is_empty());
    let manifest = json(&dir.path().join("m/manifest.json"));
    assert_eq!(manifest["command"], "mine");
    assert_eq!(manifest["fingerprint"].as_str().unwrap().len(), 16);
    assert_eq!(manifest["artifacts"], serde_json::json!(["rules.json"]));
    let replay: Value = json(&dir.path().join("m/config.json"));
    assert_eq!(replay["seeds"], serde_json::json!([1]));
}

#[test]
fn equal_fingerprints_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["export", "--k", "16", "--seed", "1"];
    for out in ["a", "b"] {
        let o = tkg(dir.path(), &[&args[..], &["--out", out]].concat());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let lines = fs::read_to_string(a.join("finetune.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 16);
    for f in ["finetune.jsonl", "finetune.manifest.json", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (ma, mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
    assert_eq!(ma["fingerprint"], mb["fingerprint"]);
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.json"), r#"{"mining": {"num_walks": 20, "seed": 5}, "queries": {"limit": 7}}"#).unwrap();
    let o = tkg(dir.path(), &["retrieve", "--config", "run.json", "--walks", "30", "--history", "5", "--out", "r"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = json(&dir.path().join("r/config.json"));
    assert_eq!(cfg["mining"]["num_walks"], 30);
    assert_eq!(cfg["mining"]["seed"], 5);
    assert_eq!(cfg["retrieval"]["max_history"], 5);
    let text = fs::read_to_string(dir.path().join("r/histories.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn empty_test_split_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tkg(
        dir.path(),
        &["eval", "--predictor", "oracle", "--dataset", "synthetic", "--set", "dataset.planted.test_fraction=0"],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("test split has no queries"), "{}", stderr(&o));
}

#[test]
fn bad_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.json"), r#"{"retrieval": {"max_history": "lots"}}"#).unwrap();
    let o = tkg(dir.path(), &["eval", "--config", "run.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("retrieval.max_history"), "{}", stderr(&o));

    let o = tkg(dir.path(), &["mine", "--set", "mining.rule_length=2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`mining`"), "{}", stderr(&o));

    let o = tkg(dir.path(), &["mine", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_preset_data_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tkg(dir.path(), &["mine", "--dataset", "icews14"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("icews14"), "{}", stderr(&o));
}

#[test]
fn oracle_eval_reports_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let o = tkg(dir.path(), &["eval", "--limit", "40", "--batch-size", "16", "--out", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = fs::read_to_string(dir.path().join("e/report.json")).unwrap();
    let report: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["n_queries"], 40);
    let journal = fs::read_to_string(dir.path().join("e/journal.jsonl")).unwrap();
    assert_eq!(journal.lines().count(), 41);
    let o = tkg(dir.path(), &["eval", "--limit", "40", "--batch-size", "16", "--out", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(dir.path().join("e/report.json")).unwrap(), first);
}

#[test]
fn seeds_are_replicated_and_summarised() {
    let dir = tempfile::tempdir().unwrap();
    let o = tkg(dir.path(), &["eval", "--seeds", "1,2", "--limit", "30", "--no-journal", "--out", "s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report-seed1.json", "report-seed2.json", "summary.json"] {
        assert!(dir.path().join("s").join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("s/journal-seed1.jsonl").exists());
    assert_eq!(json(&dir.path().join("s/summary.json"))["n_runs"], 2);
}

#[test]
fn ablate_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = tkg(
        dir.path(),
        &["ablate", "--orders", "ascending,descending", "--histories", "10,50", "--formats", "index", "--out", "g"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = fs::read_to_string(dir.path().join("g/ablation.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 5);
    assert!(tsv.starts_with("format\torder\thistory\t"));
}

#[test]
fn llm_predictor_through_a_stub() {
    let server = StubServer::fixed(&["0.E5]", "E6]"]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let url = server.url();
    let o = tkg(dir.path(), &["infer", "--predictor", "llm", "--endpoint", &url, "--limit", "5", "--out", "i"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = fs::read_to_string(dir.path().join("i/predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 5);
    let first: Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    assert!(first["names"].as_array().unwrap().contains(&Value::String("E6".into())));
    assert_eq!(server.requests(), 5);

    let o = tkg(dir.path(), &["eval", "--predictor", "llm", "--endpoint", &url, "--limit", "5", "--out", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("e/report.json"))["n_queries"], 5);
}

#[test]
fn unreachable_endpoint_exits_with_transport_code() {
    let dir = tempfile::tempdir().unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    drop(listener);
    let o = tkg(
        dir.path(),
        &["eval", "--predictor", "llm", "--endpoint", &url, "--retries", "1", "--limit", "3", "--no-journal"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("transport failure"), "{}", stderr(&o));
}

#[test]
fn llm_without_endpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tkg(dir.path(), &["eval", "--predictor", "llm", "--limit", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("endpoint"), "{}", stderr(&o));
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = tkg(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ablate"));
}
