//! Per-cell medians and log-log rate fits.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use pretrain_core::prob::fit_loglog_slope;

use crate::config::Axis;
use crate::sweep::SweepRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub axis: Axis,
    pub method: String,
    /// Fixed value of the other axis.
    pub other_axis_value: usize,
    /// `(axis value, median excess risk)` per cell.
    pub points: Vec<(f64, f64)>,
    pub slope: Option<f64>,
    pub slope_std_error: Option<f64>,
    pub intercept: Option<f64>,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub error: Option<String>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

fn axis_value(row: &SweepRow, axis: Axis) -> usize {
    match axis {
        Axis::M => row.m,
        Axis::N => row.n,
    }
}

fn other_value(row: &SweepRow, axis: Axis) -> usize {
    match axis {
        Axis::M => row.n,
        Axis::N => row.m,
    }
}

/// Median excess risk per axis value, using only cells where the other axis
/// is at its largest value.
pub fn cell_medians(rows: &[SweepRow], axis: Axis, method: &str) -> Result<(usize, Vec<(f64, f64)>)> {
    let relevant: Vec<&SweepRow> = rows.iter().filter(|r| r.method == method).collect();
    let Some(other_max) = relevant.iter().map(|r| other_value(r, axis)).max() else {
        bail!("no {method} rows");
    };
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in relevant.iter().filter(|r| other_value(r, axis) == other_max) {
        let entry = groups.entry(axis_value(row, axis)).or_default();
        if let (false, Some(v)) = (row.failed, row.excess_risk) {
            entry.push(v);
        }
    }
    let mut points = Vec::new();
    for (x, mut values) in groups {
        match median(&mut values) {
            Some(med) => points.push((x as f64, med)),
            None => bail!("cell {}={x} has no successful trials", axis.as_str()),
        }
    }
    Ok((other_max, points))
}

/// Log-log slope of median excess risk; pass iff `|slope − target| ≤ tolerance`.
pub fn fit_rate(rows: &[SweepRow], axis: Axis, method: &str, target: f64, tolerance: f64) -> RateReport {
    let mut report = RateReport {
        axis,
        method: method.to_string(),
        other_axis_value: 0,
        points: Vec::new(),
        slope: None,
        slope_std_error: None,
        intercept: None,
        target,
        tolerance,
        pass: false,
        error: None,
    };
    let (other, points) = match cell_medians(rows, axis, method) {
        Ok(v) => v,
        Err(e) => {
            report.error = Some(format!("{e:#}"));
            return report;
        }
    };
    report.other_axis_value = other;
    report.points = points;
    if report.points.len() < 3 {
        report.error = Some(format!("need at least 3 distinct {} values, got {}", axis.as_str(), report.points.len()));
        return report;
    }
    match fit_loglog_slope(&report.points) {
        Ok(fit) => {
            report.slope = Some(fit.slope);
            report.slope_std_error = Some(fit.std_error);
            report.intercept = Some(fit.intercept);
            report.pass = (fit.slope - target).abs() <= tolerance;
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}
