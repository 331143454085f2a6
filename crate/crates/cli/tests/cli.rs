mod support;

use std::fs;

use support::{erflow, members, record_body, toy_dir, Server};

fn write_config(dir: &std::path::Path, patch: impl FnOnce(&mut serde_json::Value)) -> std::path::PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(toy_dir().join("config.json")).unwrap()).unwrap();
    v["sources"][0]["location"] = toy_dir().join("cust.csv").to_str().unwrap().into();
    patch(&mut v);
    let path = dir.join("config.json");
    fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn batch_toy_run() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report) = (dir.path().join("p.jsonl"), dir.path().join("r.json"));
    let run = erflow()
        .args(["batch", "--config"])
        .arg(toy_dir().join("config.json"))
        .arg("--out")
        .arg(&out)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(run.stdout.is_empty());
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report["profiles"], 2);
    assert_eq!(report["edges"]["match"], 1);
}

#[test]
fn batch_config_error_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| v["matcher"]["tau_possible"] = 0.95.into());
    let run = erflow()
        .args(["batch", "--config"])
        .arg(&cfg)
        .args(["--out", "/dev/null", "--report", "/dev/null"])
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("matcher.tau_possible"));
}

#[test]
fn batch_missing_source_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| v["sources"][0]["location"] = "missing.csv".into());
    let run = erflow()
        .args(["batch", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("p.jsonl"))
        .arg("--report")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("cust") && stderr.contains("extraction"), "{stderr}");
}

fn evaluate(dir: &std::path::Path, predicted: &str, truth: &str, mode: &str) -> std::process::Output {
    let (p, t) = (dir.join("pred.jsonl"), dir.join("truth.jsonl"));
    fs::write(&p, predicted).unwrap();
    fs::write(&t, truth).unwrap();
    erflow()
        .arg("evaluate")
        .arg("--predicted")
        .arg(&p)
        .arg("--truth")
        .arg(&t)
        .args(["--mode", mode])
        .output()
        .unwrap()
}

const PAIR_AB: &str = r#"{"profile_id":"p:a+b","representation":"pair","member_ids":["a","b"],"provenance":[["s",0],["s",1]]}"#;
const PAIR_AC: &str = r#"{"profile_id":"p:a+c","representation":"pair","member_ids":["a","c"],"provenance":[["s",0],["s",2]]}"#;

#[test]
fn evaluate_pairwise() {
    let dir = tempfile::tempdir().unwrap();
    let perfect = evaluate(dir.path(), &format!("{PAIR_AB}\n"), "{\"pair\":[\"a\",\"b\"]}\n", "pairwise");
    assert_eq!(perfect.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&perfect.stdout).unwrap();
    assert_eq!(v["metrics"]["f1"], 1.0);
    assert_eq!(v["metric_family"], "pairwise");

    let half = evaluate(
        dir.path(),
        &format!("{PAIR_AB}\n{PAIR_AC}\n"),
        "{\"pair\":[\"a\",\"b\"]}\n",
        "pairwise",
    );
    let v: serde_json::Value = serde_json::from_slice(&half.stdout).unwrap();
    assert_eq!(v["metrics"]["precision"], 0.5);
    assert_eq!(v["metrics"]["recall"], 1.0);
}

#[test]
fn evaluate_malformed_truth_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let run = evaluate(dir.path(), &format!("{PAIR_AB}\n"), "{\"pair\":[\"a\",\"b\"]}\n{oops\n", "pairwise");
    assert_eq!(run.status.code(), Some(1));
    assert!(run.stdout.is_empty());
    assert!(String::from_utf8_lossy(&run.stderr).contains("line 2"));
}

#[test]
fn evaluate_blocking_needs_reference_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = evaluate(dir.path(), "{\"member_ids\":[\"a\",\"b\"]}\n", "{\"pair\":[\"a\",\"b\"]}\n", "blocking");
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn help_lists_flags() {
    let out = erflow().args(["serve", "--help"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--config", "--listen", "--store", "ERFLOW_LISTEN", "ERFLOW_STORE"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn service_ingest_query_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_dir().join("service.json");
    let store = dir.path().join("store");
    let before = {
        let server = Server::start(&cfg, &store);
        let (status, health) = server.get("/health");
        assert_eq!((status, health["store_version"].as_u64()), (200, Some(0)));

        let (status, body) = server.post("/records", &record_body(0, "John Smith", "NYC"));
        assert_eq!(status, 200, "{body}");
        assert_eq!(members(&body["profiles"]), vec![vec!["cust:0"]]);
        let (_, body) = server.post("/records", &record_body(1, "Jon Smith", "NYC"));
        assert_eq!(members(&body["profiles"]), vec![vec!["cust:0", "cust:1"]]);
        server.post("/records", &record_body(2, "Alice Jones", "LA"));

        let (status, _) = server.post("/records", "{not json");
        assert_eq!(status, 400);
        let (status, _) = server.post("/records", &record_body(0, "Someone Else", "LA"));
        assert_eq!(status, 409);
        let (status, _) = server.get("/profiles?ref_id=cust:9");
        assert_eq!(status, 404);
        let (status, _) = server.get("/profiles");
        assert_eq!(status, 400);

        let (_, city) = server.get("/profiles?attr=city&value=LA");
        assert_eq!(members(&city["profiles"]), vec![vec!["cust:2"]]);
        let (_, report) = server.get("/report");
        assert_eq!(report["records_ingested"], 3);
        // the malformed body never reached the resolver
        assert_eq!(report["records_rejected"], 1);

        ["cust:0", "cust:1", "cust:2"].map(|id| server.get(&format!("/profiles?ref_id={id}")))
    };
    let server = Server::start(&cfg, &store);
    let after = ["cust:0", "cust:1", "cust:2"].map(|id| server.get(&format!("/profiles?ref_id={id}")));
    assert_eq!(before, after);
    assert_eq!(members(&after[1].1["profiles"]), vec![vec!["cust:0", "cust:1"]]);
}

#[test]
fn serve_rejects_corrupt_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    {
        let server = Server::start(&toy_dir().join("service.json"), &store);
        server.post("/records", &record_body(0, "John Smith", "NYC"));
        server.post("/records", &record_body(1, "Jon Smith", "NYC"));
    }
    let log = store.join("log.jsonl");
    let mut bytes = fs::read(&log).unwrap();
    bytes[20] ^= 0x20;
    fs::write(&log, bytes).unwrap();
    let run = erflow()
        .args(["serve", "--config"])
        .arg(toy_dir().join("service.json"))
        .args(["--listen", "127.0.0.1:0"])
        .env("ERFLOW_STORE", &store)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("checksum"));
}
