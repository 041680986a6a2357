use std::fs;

use pretrain_bench::app;
use pretrain_bench::config::{Axis, LoadedConfig};
use pretrain_bench::rate::fit_rate;
use pretrain_bench::report::{csv_string, read_csv, summary_json, write_csv, RESULTS_FILE, SUMMARY_FILE};
use pretrain_bench::sweep::{run_sweep, SweepRow, BASELINE, PIPELINE};

const SMALL_FACTOR: &str = r#"
[experiment]
id = "small"
instantiation = "factor"
master_seed = 5
trials = 3
mc_count = 1000

[sweep]
m = [200, 400]
n = [50, 100]

[factor]
d = 8
singular_values = [1.0, 1.0]
beta_norm = 1.0
instance_seed = 3

[[checks]]
kind = "rate"
axis = "m"
target = -1.0
tolerance = 10.0
"#;

fn small(out: &std::path::Path) -> LoadedConfig {
    let mut loaded = LoadedConfig::from_str(SMALL_FACTOR).unwrap();
    loaded.config.experiment.out_dir = out.to_path_buf();
    loaded
}

#[test]
fn one_cell_one_trial_gives_two_rows() {
    let mut loaded = small(std::path::Path::new("unused"));
    loaded.config.sweep.m = vec![200];
    loaded.config.sweep.n = vec![50];
    loaded.config.experiment.trials = 1;
    let rows = run_sweep(&loaded.config, 1).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].method, PIPELINE);
    assert_eq!(rows[1].method, BASELINE);
    assert_eq!(rows[0].seed, rows[1].seed);
}

#[test]
fn row_count_and_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = small(dir.path());
    let outcome = app::run(&loaded, 2).unwrap();
    assert_eq!(outcome.rows.len(), 2 * 2 * 3 * 2);
    assert!(outcome.rows.iter().all(|r| !r.failed));
    let parsed = read_csv(&dir.path().join(RESULTS_FILE)).unwrap();
    assert_eq!(parsed, outcome.rows);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 5);
    assert_eq!(summary["config_hash"].as_str().unwrap(), loaded.hash);
    assert_eq!(summary["cells"], 4);
    assert!(dir.path().join("rate_m_pipeline.svg").exists());
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    app::run(&small(a.path()), 1).unwrap();
    app::run(&small(b.path()), 3).unwrap();
    let left = fs::read(a.path().join(RESULTS_FILE)).unwrap();
    let right = fs::read(b.path().join(RESULTS_FILE)).unwrap();
    assert_eq!(left, right);
}

#[test]
fn report_recomputes_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = small(dir.path());
    let first = app::run(&loaded, 1).unwrap();
    let again = app::rerun_report(&loaded, dir.path()).unwrap();
    assert_eq!(first.rows, again.rows);
    assert_eq!(first.checks.len(), again.checks.len());
    assert_eq!(first.checks[0].pass, again.checks[0].pass);
}

#[test]
fn empty_results_give_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(RESULTS_FILE);
    write_csv(&[], &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.trim_end(),
        "experiment_id,instantiation,method,m,n,d,r_or_k,trial,seed,excess_risk,excess_risk_se,aux_tv,aux_align_residual,failed"
    );
    assert!(read_csv(&path).unwrap().is_empty());
    let loaded = small(dir.path());
    let summary: serde_json::Value =
        serde_json::from_str(&summary_json(&loaded.config, &loaded.hash, &[], &[], &[], None).unwrap()).unwrap();
    assert_eq!(summary["cells"], 0);
    assert_eq!(summary["rows"], 0);
}

#[test]
fn missing_values_survive_round_trip() {
    let row = SweepRow {
        experiment_id: "x".into(),
        instantiation: "gmm".into(),
        method: BASELINE.into(),
        m: 1,
        n: 2,
        d: 3,
        r_or_k: 4,
        trial: 0,
        seed: u64::MAX,
        excess_risk: None,
        excess_risk_se: Some(0.1 + 0.2),
        aux_tv: Some(1e-300),
        aux_align_residual: None,
        failed: true,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(RESULTS_FILE);
    fs::write(&path, csv_string(std::slice::from_ref(&row)).unwrap()).unwrap();
    assert_eq!(read_csv(&path).unwrap(), vec![row]);
}

#[test]
fn rate_needs_three_cells() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = app::run(&small(dir.path()), 1).unwrap();
    let report = fit_rate(&outcome.rows, Axis::N, PIPELINE, -0.5, 0.2);
    assert!(!report.pass);
    assert!(report.error.is_some());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = SMALL_FACTOR.replace("trials = 3", "trials = 0");
    assert!(LoadedConfig::from_str(&bad).is_err());
    let bad = SMALL_FACTOR.replace("m = [200, 400]", "m = []");
    assert!(LoadedConfig::from_str(&bad).is_err());
    let bad = SMALL_FACTOR.replace("beta_norm = 1.0", "beta_norm = 1.0\nunknown = 2");
    let err = LoadedConfig::from_str(&bad).unwrap_err().to_string();
    assert!(err.contains("unknown"), "{err}");
}

#[test]
fn builtin_configs_parse() {
    use pretrain_bench::config::builtin::*;
    for text in [FACTOR_M_AXIS, FACTOR_N_AXIS, FACTOR_BENEFIT, GMM_N_AXIS, CONTRASTIVE_N_AXIS, COUNTEREXAMPLE, VERIFY] {
        LoadedConfig::from_str(text).unwrap();
    }
}
