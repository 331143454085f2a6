use std::collections::BTreeMap;
use std::path::PathBuf;

use erflow_core::pipeline::{IncrementalResolver, ProfileSelector, RecordInput};
use erflow_core::store::StoreBackend;
use erflow_core::{jsonl, run_batch, ClustererKind, Error, Mode, Representation, RuntimeConfig};

fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn toy_config() -> RuntimeConfig {
    RuntimeConfig::from_path(&toy_dir().join("config.json")).unwrap()
}

fn incremental(mut cfg: RuntimeConfig, store: Option<StoreBackend>) -> IncrementalResolver {
    cfg.mode = Mode::Incremental;
    cfg.store = store;
    IncrementalResolver::new(cfg).unwrap()
}

fn record(ordinal: u64, name: &str, city: &str) -> RecordInput {
    RecordInput {
        source_id: "cust".into(),
        record_ordinal: Some(ordinal),
        payload: BTreeMap::from([("name".into(), name.into()), ("city".into(), city.into())]),
    }
}

fn toy_records() -> Vec<RecordInput> {
    vec![
        record(0, "John Smith", "NYC"),
        record(1, "Jon Smith", "NYC"),
        record(2, "Alice Jones", "LA"),
    ]
}

fn members(profiles: &[erflow_core::EntityProfile]) -> Vec<Vec<String>> {
    profiles.iter().map(|p| p.member_ids.clone()).collect()
}

#[test]
fn toy_batch_gives_two_profiles() {
    let out = run_batch(&toy_config()).unwrap();
    assert_eq!(members(&out.profiles), vec![vec!["cust:0", "cust:1"], vec!["cust:2"]]);
    let r = &out.report;
    assert_eq!((r.records_read, r.references_built), (3, 3));
    assert_eq!(r.groups_generated, 1);
    assert_eq!(r.edges.matched, 1);
    assert_eq!(r.edges.total(), r.pairs_scored);
    assert_eq!(r.clusters, Some(2));
    assert_eq!(r.profiles, 2);
    for stage in ["extraction", "comparison_space", "matching", "clustering", "assembly"] {
        assert!(r.stage_millis.contains_key(stage), "{stage}");
    }
}

#[test]
fn toy_output_is_stable_across_thread_counts() {
    let mut cfg = toy_config();
    let mut outputs = Vec::new();
    for threads in [1, 2, 8] {
        cfg.threads = Some(threads);
        outputs.push(jsonl::to_string(&run_batch(&cfg).unwrap().profiles));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn matcher_only_pipeline_emits_pairs() {
    let mut cfg = toy_config();
    cfg.clusterer = None;
    cfg.assembly = erflow_core::AssemblyKind::Pair;
    cfg.validate().unwrap();
    let out = run_batch(&cfg).unwrap();
    assert!(out.partition.is_none());
    assert_eq!(members(&out.profiles), vec![vec!["cust:0", "cust:1"]]);
    assert_eq!(out.profiles[0].representation, Representation::Pair);
}

#[test]
fn clusterer_only_pipeline_gives_singletons() {
    let mut cfg = toy_config();
    cfg.matcher = None;
    cfg.validate().unwrap();
    let out = run_batch(&cfg).unwrap();
    assert_eq!(out.profiles.len(), 3);
    assert!(out.profiles.iter().all(|p| p.member_ids.len() == 1));
}

#[test]
fn missing_source_names_stage_and_source() {
    let mut cfg = toy_config();
    cfg.sources[0].location = "/nonexistent/cust.csv".into();
    let err = run_batch(&cfg).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "extraction", .. }));
    assert!(matches!(err.root(), Error::SourceNotFound { source_id, .. } if source_id == "cust"));
}

#[test]
fn batch_persists_each_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config();
    cfg.store = Some(StoreBackend::File { path: dir.path().join("store") });
    let out = run_batch(&cfg).unwrap();
    assert_eq!(out.report.store_version, Some(5));
    let store = erflow_core::ReferenceStore::open(cfg.store.as_ref().unwrap()).unwrap();
    let edges: Vec<erflow_core::MatchEdge> = store.get(None).unwrap();
    assert_eq!(edges.len(), 1);
    let profiles: Vec<erflow_core::EntityProfile> = store.get(None).unwrap();
    assert_eq!(profiles, out.profiles);
}

#[test]
fn incremental_toy_run() {
    let mut inc = incremental(toy_config(), None);
    let first = inc.ingest(record(0, "John Smith", "NYC")).unwrap();
    assert_eq!(members(&first.profiles), vec![vec!["cust:0"]]);
    let second = inc.ingest(record(1, "Jon Smith", "NYC")).unwrap();
    assert_eq!(members(&second.profiles), vec![vec!["cust:0", "cust:1"]]);
    inc.ingest(record(2, "Alice Jones", "LA")).unwrap();

    let by_ref = inc.query(&ProfileSelector::ByRefId("cust:1".into())).unwrap();
    assert_eq!(members(&by_ref), vec![vec!["cust:0", "cust:1"]]);
    let by_city = inc
        .query(&ProfileSelector::ByAttributeEquals {
            name: "city".into(),
            value: "LA".into(),
        })
        .unwrap();
    assert_eq!(members(&by_city), vec![vec!["cust:2"]]);
    assert!(matches!(
        inc.query(&ProfileSelector::ByRefId("cust:9".into())),
        Err(Error::NotFound(_))
    ));

    let batch = run_batch(&toy_config()).unwrap();
    assert_eq!(Some(inc.partition()), batch.partition);
    let report = inc.report();
    assert_eq!((report.records_ingested, report.clusters), (3, 2));
}

#[test]
fn incremental_matches_batch_in_every_order() {
    let batch = run_batch(&toy_config()).unwrap().partition.unwrap();
    let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for order in orders {
        let mut inc = incremental(toy_config(), None);
        for i in order {
            inc.ingest(toy_records()[i].clone()).unwrap();
        }
        assert_eq!(inc.partition(), batch, "order {order:?}");
    }
}

#[test]
fn incremental_rejects_bad_records_without_state_change() {
    let mut inc = incremental(toy_config(), None);
    inc.ingest(record(0, "John Smith", "NYC")).unwrap();
    let before = inc.store().latest_version();

    let undeclared = RecordInput {
        source_id: "crm".into(),
        ..record(1, "x", "y")
    };
    assert!(matches!(inc.ingest(undeclared), Err(Error::InvalidInput(_))));
    let empty = RecordInput {
        payload: BTreeMap::new(),
        ..record(1, "x", "y")
    };
    assert!(matches!(inc.ingest(empty), Err(Error::InvalidInput(_))));
    assert!(matches!(inc.ingest(record(0, "Other", "LA")), Err(Error::Conflict(_))));

    // identical resubmission is accepted without a new version
    let again = inc.ingest(record(0, "John Smith", "NYC")).unwrap();
    assert!(!again.created);
    assert_eq!(inc.store().latest_version(), before);
    assert_eq!(inc.report().records_rejected, 3);
    assert_eq!(inc.partition().universe.len(), 1);
}

#[test]
fn ordinals_assigned_when_absent() {
    let mut inc = incremental(toy_config(), None);
    let mut r = record(0, "John Smith", "NYC");
    r.record_ordinal = None;
    assert_eq!(inc.ingest(r.clone()).unwrap().ref_id, "cust:0");
    r.payload.insert("name".into(), "Jon Smith".into());
    assert_eq!(inc.ingest(r).unwrap().ref_id, "cust:1");
}

#[test]
fn incremental_state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let backend = StoreBackend::File { path: dir.path().join("store") };
    let (partition, answer) = {
        let mut inc = incremental(toy_config(), Some(backend.clone()));
        for r in toy_records() {
            inc.ingest(r).unwrap();
        }
        (inc.partition(), inc.query(&ProfileSelector::ByRefId("cust:0".into())).unwrap())
    };
    let inc = incremental(toy_config(), Some(backend));
    assert_eq!(inc.partition(), partition);
    assert_eq!(inc.query(&ProfileSelector::ByRefId("cust:0".into())).unwrap(), answer);
    assert_eq!(inc.report().references, 3);
}

#[test]
fn incremental_requires_connected_components() {
    let mut cfg = toy_config();
    cfg.mode = Mode::Incremental;
    cfg.clusterer = Some(ClustererKind::UniqueMapping);
    assert!(IncrementalResolver::new(cfg).is_err());
}

#[test]
fn record_input_parses_scalars() {
    let r = RecordInput::from_json(r#"{"source_id":"cust","payload":{"name":"Jo","age":41,"vip":true,"x":null}}"#)
        .unwrap();
    assert_eq!(r.payload["age"], "41");
    assert_eq!(r.payload["vip"], "true");
    assert!(!r.payload.contains_key("x"));
    assert!(RecordInput::from_json(r#"{"source_id":"cust"}"#).is_err());
    assert!(RecordInput::from_json(r#"{"source_id":"cust","payload":{},"extra":1}"#).is_err());
    assert!(RecordInput::from_json("[1]").is_err());
}
