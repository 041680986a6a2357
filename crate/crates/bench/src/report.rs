//! Output files: `results.csv`, `summary.json` and one SVG per rate report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::checks::CheckOutcome;
use crate::config::ExperimentConfig;
use crate::rate::RateReport;
use crate::sweep::SweepRow;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn csv_string(rows: &[SweepRow]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.write_record([
        "experiment_id",
        "instantiation",
        "method",
        "m",
        "n",
        "d",
        "r_or_k",
        "trial",
        "seed",
        "excess_risk",
        "excess_risk_se",
        "aux_tv",
        "aux_align_residual",
        "failed",
    ])?;
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(String::from_utf8(bytes)?)
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    fs::write(path, csv_string(rows)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(rows)
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub experiment_id: &'a str,
    pub instantiation: &'a str,
    pub master_seed: u64,
    pub config_hash: &'a str,
    pub seed_rule: &'static str,
    pub config: &'a ExperimentConfig,
    pub cells: usize,
    pub rows: usize,
    pub failed_rows: usize,
    pub rate_reports: &'a [RateReport],
    pub checks: &'a [CheckOutcome],
    pub all_pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<Value>,
}

pub fn summary_json(
    config: &ExperimentConfig,
    config_hash: &str,
    rows: &[SweepRow],
    reports: &[RateReport],
    checks: &[CheckOutcome],
    extra: Option<Value>,
) -> Result<String> {
    let mut cells: Vec<(usize, usize)> = rows.iter().map(|r| (r.m, r.n)).collect();
    cells.sort_unstable();
    cells.dedup();
    let summary = Summary {
        experiment_id: &config.experiment.id,
        instantiation: config.experiment.instantiation.as_str(),
        master_seed: config.experiment.master_seed,
        config_hash,
        seed_rule: "trial t draws from stream (master_seed, t); seed column = mix64(master_seed, t)",
        config,
        cells: cells.len(),
        rows: rows.len(),
        failed_rows: rows.iter().filter(|r| r.failed).count(),
        rate_reports: reports,
        checks,
        all_pass: checks.iter().all(|c| c.pass),
        extra,
    };
    Ok(serde_json::to_string_pretty(&summary)?)
}

/// Log-log scatter of cell medians with the fitted line.
pub fn rate_svg(report: &RateReport) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 56.0;
    let positive: Vec<(f64, f64)> = report
        .points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let title = match report.slope {
        Some(s) => format!("{} axis: slope {:.3} (target {:.2} ± {:.2})", report.axis.as_str(), s, report.target, report.tolerance),
        None => format!("{} axis: no fit ({})", report.axis.as_str(), report.error.as_deref().unwrap_or("?")),
    };
    let _ = writeln!(svg, r#"<text x="{}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#, W / 2.0, escape(&title));
    if positive.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1) = bounds(positive.iter().map(|p| p.0));
    let (mut y0, mut y1) = bounds(positive.iter().map(|p| p.1));
    x0 = x0.floor();
    x1 = x1.ceil().max(x0 + 1.0);
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let _ = writeln!(
        svg,
        r#"<path d="M{} {} L{} {} L{} {}" stroke="black" fill="none"/>"#,
        sx(x0), sy(y1), sx(x0), sy(y0), sx(x1), sy(y0)
    );
    for e in (x0 as i32)..=(x1 as i32) {
        let x = sx(e as f64);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">1e{e}</text>"#, H - PAD + 16.0);
    }
    for e in (y0 as i32)..=(y1 as i32) {
        let y = sy(e as f64);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">1e{e}</text>"#, PAD - 6.0, y + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, report.axis.as_str());
    let _ = writeln!(svg, r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">median excess risk</text>"#, H / 2.0, H / 2.0);
    if let (Some(slope), Some(intercept)) = (report.slope, report.intercept) {
        let (a, b) = bounds(positive.iter().map(|p| p.0));
        // intercept is in natural-log units
        let line = |lx: f64| (slope * lx * std::f64::consts::LN_10 + intercept) / std::f64::consts::LN_10;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="steelblue" stroke-width="2"/>"#,
            sx(a), sy(line(a)), sx(b), sy(line(b))
        );
    }
    for (x, y) in &positive {
        let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="firebrick"/>"#, sx(*x), sy(*y));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the full file set and returns the paths written.
pub fn emit_report(
    config: &ExperimentConfig,
    config_hash: &str,
    rows: &[SweepRow],
    reports: &[RateReport],
    checks: &[CheckOutcome],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut written = Vec::new();
    let csv_path = out_dir.join(RESULTS_FILE);
    write_csv(rows, &csv_path)?;
    written.push(csv_path);
    let summary_path = out_dir.join(SUMMARY_FILE);
    fs::write(&summary_path, summary_json(config, config_hash, rows, reports, checks, None)?)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    written.push(summary_path);
    for report in reports {
        let path = out_dir.join(format!("rate_{}_{}.svg", report.axis.as_str(), report.method));
        fs::write(&path, rate_svg(report)).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

