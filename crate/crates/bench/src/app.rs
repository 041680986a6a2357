//! Top-level runs shared by the binary and the tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::json;

use crate::checks::{evaluate, CheckOutcome};
use crate::config::{Check, LoadedConfig};
use crate::rate::RateReport;
use crate::report::{emit_report, read_csv, summary_json, RESULTS_FILE, SUMMARY_FILE};
use crate::sweep::{run_sweep, SweepRow};
use crate::verify::{run_verify, suite_summary, verify_csv, VerifyRow};

pub const VERIFY_FILE: &str = "verify.csv";

#[derive(Debug, Default)]
pub struct Outcome {
    pub rows: Vec<SweepRow>,
    pub verify_rows: Vec<VerifyRow>,
    pub reports: Vec<RateReport>,
    pub checks: Vec<CheckOutcome>,
    pub files: Vec<PathBuf>,
    pub seconds: f64,
}

impl Outcome {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Runs a sweep or the verify suites, writing outputs to the configured directory.
pub fn run(loaded: &LoadedConfig, jobs: usize) -> Result<Outcome> {
    let start = Instant::now();
    let config = &loaded.config;
    let out_dir = &config.experiment.out_dir;
    let mut outcome = if let Some(params) = &config.verify {
        let verify_rows = run_verify(params, config.experiment.master_seed, config.experiment.mc_count, jobs)?;
        let mut checks = Vec::new();
        for check in &config.checks {
            if let Check::Informative = check {
                let failing: Vec<String> = verify_rows
                    .iter()
                    .filter(|r| !r.holds)
                    .map(|r| format!("{}#{}", r.suite, r.instance))
                    .collect();
                checks.push(CheckOutcome {
                    kind: "informative".into(),
                    pass: failing.is_empty() && !verify_rows.is_empty(),
                    details: json!({ "suites": suite_summary(&verify_rows), "failing": failing }),
                });
            } else {
                let (mut c, _) = evaluate(std::slice::from_ref(check), &[]);
                checks.append(&mut c);
            }
        }
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let csv_path = out_dir.join(VERIFY_FILE);
        fs::write(&csv_path, verify_csv(&verify_rows)?).with_context(|| format!("writing {}", csv_path.display()))?;
        let summary_path = out_dir.join(SUMMARY_FILE);
        let extra = json!({ "suites": suite_summary(&verify_rows) });
        fs::write(&summary_path, summary_json(config, &loaded.hash, &[], &[], &checks, Some(extra))?)
            .with_context(|| format!("writing {}", summary_path.display()))?;
        Outcome {
            verify_rows,
            checks,
            files: vec![csv_path, summary_path],
            ..Outcome::default()
        }
    } else {
        let rows = run_sweep(config, jobs)?;
        let (checks, reports) = evaluate(&config.checks, &rows);
        let files = emit_report(config, &loaded.hash, &rows, &reports, &checks, out_dir)?;
        Outcome {
            rows,
            reports,
            checks,
            files,
            ..Outcome::default()
        }
    };
    outcome.seconds = start.elapsed().as_secs_f64();
    Ok(outcome)
}

/// Re-evaluates checks from an existing results.csv and rewrites the report files.
pub fn rerun_report(loaded: &LoadedConfig, dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let rows = read_csv(&dir.join(RESULTS_FILE))?;
    let (checks, reports) = evaluate(&loaded.config.checks, &rows);
    let files = emit_report(&loaded.config, &loaded.hash, &rows, &reports, &checks, dir)?;
    Ok(Outcome {
        rows,
        reports,
        checks,
        files,
        seconds: start.elapsed().as_secs_f64(),
        ..Outcome::default()
    })
}
