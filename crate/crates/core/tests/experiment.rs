use std::collections::BTreeMap;

use harmrl::experiment::{run_experiment, summarize_replications, write_outputs, ExperimentConfig, Method, REPLICATION_COLUMNS};
use harmrl::fqi::FqiConfig;
use harmrl::Error;

fn small_config(toml: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml_str(toml).unwrap();
    c.fqi = FqiConfig::linear(c.gamma);
    c
}

fn read(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn same_seed_gives_identical_files_regardless_of_threads() {
    let mut a = small_config("sample_sizes = [60]\nreplications = 2\nbetas = [0.0, 0.5]\nseed = 11");
    a.threads = Some(1);
    let mut b = a.clone();
    b.threads = Some(3);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_outputs(&run_experiment(&a).unwrap(), &a, da.path()).unwrap();
    write_outputs(&run_experiment(&b).unwrap(), &b, db.path()).unwrap();
    for f in ["replications.csv", "aggregate.csv"] {
        assert_eq!(read(&da.path().join(f)), read(&db.path().join(f)), "{f}");
    }
    let header = read(&da.path().join("replications.csv")).lines().next().unwrap().to_string();
    assert_eq!(header, REPLICATION_COLUMNS.join(","));
    let manifest: serde_json::Value = serde_json::from_str(&read(&da.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap(), a.hash().unwrap());
    assert_eq!(manifest["rows"].as_u64().unwrap(), 2 * 4 * 2);
}

#[test]
fn different_seeds_differ() {
    let a = small_config("sample_sizes = [40]\nreplications = 1\nseed = 1");
    let b = small_config("sample_sizes = [40]\nreplications = 1\nseed = 2");
    let ra = run_experiment(&a).unwrap();
    let rb = run_experiment(&b).unwrap();
    assert_ne!(ra.rows[0].disc_outcome, rb.rows[0].disc_outcome);
}

#[test]
fn aggregate_file_matches_recomputation_from_rows() {
    let c = small_config("sample_sizes = [40, 80]\nreplications = 3\nbetas = [0.25, 1.0]");
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&run_experiment(&c).unwrap(), &c, dir.path()).unwrap();

    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(dir.path().join("replications.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let value: f64 = rec[7].parse().unwrap();
        groups.entry((rec[0].to_string(), rec[1].to_string(), rec[3].to_string())).or_default().push(value);
    }
    let mut rdr = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
    let mut seen = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let values = &groups[&(rec[0].to_string(), rec[1].to_string(), rec[2].to_string())];
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert_eq!(rec[3].parse::<usize>().unwrap(), values.len());
        assert!((rec[4].parse::<f64>().unwrap() - mean).abs() <= 1e-12);
        assert!((rec[5].parse::<f64>().unwrap() - var.sqrt()).abs() <= 1e-12);
        assert!((rec[6].parse::<f64>().unwrap() - var.sqrt() / n.sqrt()).abs() <= 1e-12);
        seen += 1;
    }
    assert_eq!(seen, groups.len());
    assert_eq!(seen, 4 * 2 * 2);
}

#[test]
fn summary_of_hand_rows() {
    let c = small_config("sample_sizes = [30]\nreplications = 3\nmethods = [\"behavior\"]");
    let mut rows = run_experiment(&c).unwrap().rows;
    for (r, v) in rows.iter_mut().zip([1.0, 2.0, 3.0]) {
        r.disc_outcome = v;
    }
    let agg = summarize_replications(&rows);
    assert_eq!(agg.len(), 1);
    assert_eq!((agg[0].disc_outcome.mean, agg[0].disc_outcome.std), (2.0, 1.0));
}

#[test]
fn baselines_are_shared_across_the_beta_grid() {
    let c = small_config("sample_sizes = [40]\nreplications = 1\nbetas = [0.0, 0.3, 0.9]");
    let res = run_experiment(&c).unwrap();
    for m in [Method::Unaware, Method::Behavior, Method::Random] {
        let values: Vec<f64> = res.rows.iter().filter(|r| r.method == m).map(|r| r.disc_outcome).collect();
        assert_eq!(values.len(), 3);
        assert!(values.iter().all(|v| *v == values[0]));
    }
    // With no penalty the harm-aware learner sees the raw outcomes.
    let zero = res.rows.iter().find(|r| r.method == Method::HarmAware && r.beta == 0.0).unwrap();
    let unaware = res.rows.iter().find(|r| r.method == Method::Unaware).unwrap();
    assert_eq!(zero.disc_outcome, unaware.disc_outcome);
    assert_eq!(zero.avg_harm, unaware.avg_harm);
}

#[test]
fn harm_penalty_reduces_harm() {
    let c = small_config("sample_sizes = [500]\nreplications = 3\nmethods = [\"harm-aware\", \"unaware\"]");
    let res = run_experiment(&c).unwrap();
    let aware = res.aggregate(Method::HarmAware, 0.5, 500).unwrap();
    let unaware = res.aggregate(Method::Unaware, 0.5, 500).unwrap();
    assert!(aware.avg_harm.mean < unaware.avg_harm.mean, "{aware:?} vs {unaware:?}");
}

#[test]
fn majority_failure_aborts_the_run() {
    // Ridge-free degree-30 harm regression on a single trajectory is always singular.
    let c = small_config(
        "sample_sizes = [1]\nreplications = 3\nmethods = [\"harm-aware\"]\n\
         [harm_regressor]\nkind = \"linear\"\nridge = 0.0\nbasis = { kind = \"polynomial\", degree = 30 }",
    );
    match run_experiment(&c) {
        Err(Error::TooManyFailures { failed, total, .. }) => assert_eq!((failed, total), (3, 3)),
        other => panic!("expected abort, got {other:?}"),
    }
}
