//! Informativeness inequalities on randomly perturbed instances.

use anyhow::Result;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use pretrain_core::contrastive::{self, project_spectral, ContrastiveModel};
use pretrain_core::factor::{self, FactorModel};
use pretrain_core::gmm;
use pretrain_core::linalg::random_orthogonal;
use pretrain_core::RngStream;

use crate::config::VerifyParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub suite: String,
    pub instance: usize,
    pub perturbation: f64,
    pub lhs: Option<f64>,
    pub lhs_se: Option<f64>,
    /// Marginal TV (factor, gmm) or pair Hellinger (contrastive).
    pub marginal: Option<f64>,
    pub marginal_se: Option<f64>,
    pub rhs: Option<f64>,
    pub kappa: Option<f64>,
    pub empirical_ratio: Option<f64>,
    pub holds: bool,
    pub error: Option<String>,
}

impl VerifyRow {
    fn failed(suite: &str, instance: usize, perturbation: f64, error: String) -> Self {
        Self {
            suite: suite.into(),
            instance,
            perturbation,
            lhs: None,
            lhs_se: None,
            marginal: None,
            marginal_se: None,
            rhs: None,
            kappa: None,
            empirical_ratio: None,
            holds: false,
            error: Some(error),
        }
    }
}

/// Standard errors of Monte-Carlo slack allowed on each side.
pub const SLACK_SE: f64 = 4.0;

fn slack_holds(lhs: f64, lhs_se: f64, rhs: f64, kappa: f64, marginal_se: f64) -> bool {
    lhs - SLACK_SE * lhs_se <= rhs + SLACK_SE * kappa * marginal_se
}

/// Log-uniform perturbation size in `[lo, hi]`.
fn scale(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.uniform() * (hi.ln() - lo.ln())).exp()
}

fn unit_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal());
    let norm = g.norm();
    g / norm
}

fn factor_row(b_star: &DMatrix<f64>, c1: f64, mc: usize, i: usize, base: &RngStream) -> VerifyRow {
    let mut rng = base.split_named("factor", i as u64);
    let delta = scale(&mut rng, 1e-3, 0.3);
    let o = random_orthogonal(b_star.ncols(), &mut rng);
    let b = (b_star + unit_matrix(b_star.nrows(), b_star.ncols(), &mut rng) * delta) * o;
    match factor::verify_informative_factor(&b, b_star, c1, mc, &mut rng) {
        Ok(r) => VerifyRow {
            suite: "factor".into(),
            instance: i,
            perturbation: delta,
            lhs: Some(r.lhs.value),
            lhs_se: Some(r.lhs.std_error),
            marginal: Some(r.marginal_tv.value),
            marginal_se: Some(r.marginal_tv.std_error),
            rhs: Some(r.rhs),
            kappa: Some(r.kappa_used),
            empirical_ratio: Some(r.empirical_ratio()),
            holds: r.holds || slack_holds(r.lhs.value, r.lhs.std_error, r.rhs, r.kappa_used, r.marginal_tv.std_error),
            error: None,
        },
        Err(e) => VerifyRow::failed("factor", i, delta, e.to_string()),
    }
}

fn gmm_row(truth: &DMatrix<f64>, mc: usize, i: usize, base: &RngStream) -> VerifyRow {
    let mut rng = base.split_named("gmm", i as u64);
    let delta = scale(&mut rng, 1e-3, 0.15);
    let (k, d) = truth.shape();
    let mut perm: Vec<usize> = (0..k).collect();
    for j in (1..k).rev() {
        perm.swap(j, rng.index(j + 1));
    }
    let mut centers = DMatrix::zeros(k, d);
    for (row, &src) in perm.iter().enumerate() {
        let shift = unit_matrix(1, d, &mut rng) * delta;
        for j in 0..d {
            centers[(row, j)] = truth[(src, j)] + shift[(0, j)];
        }
    }
    match gmm::verify_informative_gmm(&centers, truth, mc, &mut rng) {
        Ok(r) => VerifyRow {
            suite: "gmm".into(),
            instance: i,
            perturbation: delta,
            lhs: Some(r.lhs),
            lhs_se: Some(0.0),
            marginal: Some(r.marginal_tv.value),
            marginal_se: Some(r.marginal_tv.std_error),
            rhs: Some(r.rhs),
            kappa: Some(r.constant),
            empirical_ratio: Some(r.empirical_ratio()),
            holds: r.holds || slack_holds(r.lhs, 0.0, r.rhs, r.constant, r.marginal_tv.std_error),
            error: None,
        },
        Err(e) => VerifyRow::failed("gmm", i, delta, e.to_string()),
    }
}

fn contrastive_row(theta_star: &DMatrix<f64>, beta: &DVector<f64>, c3: f64, mc: usize, i: usize, base: &RngStream) -> VerifyRow {
    let mut rng = base.split_named("contrastive", i as u64);
    let delta = scale(&mut rng, 1e-3, 0.3);
    let o = random_orthogonal(theta_star.nrows(), &mut rng);
    let mut theta = o * (theta_star + unit_matrix(theta_star.nrows(), theta_star.ncols(), &mut rng) * delta);
    project_spectral(&mut theta);
    match contrastive::verify_weakly_informative_contrastive(&theta, theta_star, beta, c3, mc, &mut rng) {
        Ok(r) => VerifyRow {
            suite: "contrastive".into(),
            instance: i,
            perturbation: delta,
            lhs: Some(r.lhs.value),
            lhs_se: Some(r.lhs.std_error),
            marginal: Some(r.hellinger.value),
            marginal_se: Some(r.hellinger.std_error),
            rhs: Some(r.rhs),
            kappa: Some(r.kappa_used),
            empirical_ratio: Some(r.empirical_ratio()),
            holds: r.holds || slack_holds(r.lhs.value, r.lhs.std_error, r.rhs, r.kappa_used, r.hellinger.std_error),
            error: None,
        },
        Err(e) => VerifyRow::failed("contrastive", i, delta, e.to_string()),
    }
}

/// Fixed ground truths for the three suites.
pub struct VerifyInstances {
    pub b_star: DMatrix<f64>,
    pub gmm_truth: DMatrix<f64>,
    pub theta_star: DMatrix<f64>,
    pub beta_star: DVector<f64>,
}

pub fn verify_instances(master_seed: u64) -> Result<VerifyInstances> {
    let base = RngStream::new(master_seed, u64::MAX);
    let b_star = FactorModel::with_singular_values(10, &[1.5, 1.0], 2.0, &mut base.split_named("factor-truth", 0))?
        .loading()
        .clone();
    let (k, d) = (3usize, 4usize);
    let a = 100.0 * (d as f64 * (k as f64).ln()).sqrt() / 2f64.sqrt();
    let gmm_truth = DMatrix::from_fn(k, d, |i, j| if i == j { a } else { 0.0 });
    let theta_star = ContrastiveModel::with_singular_values(10, &[1.0, 0.9, 0.8], &mut base.split_named("contrastive-truth", 0))?
        .theta()
        .clone();
    let mut brng = base.split_named("contrastive-beta", 0);
    let beta = DVector::from_fn(3, |_, _| brng.standard_normal());
    let beta_star = &beta / beta.norm();
    Ok(VerifyInstances {
        b_star,
        gmm_truth,
        theta_star,
        beta_star,
    })
}

/// Runs all suites on `jobs` workers; rows come back in suite then instance order.
pub fn run_verify(params: &VerifyParams, master_seed: u64, mc_count: usize, jobs: usize) -> Result<Vec<VerifyRow>> {
    let inst = verify_instances(master_seed)?;
    let base = RngStream::new(master_seed, 0);
    let c3 = params.c3.unwrap_or_else(contrastive::default_c3);
    let mut tasks: Vec<(u8, usize)> = Vec::new();
    tasks.extend((0..params.factor_instances).map(|i| (0, i)));
    tasks.extend((0..params.gmm_instances).map(|i| (1, i)));
    tasks.extend((0..params.contrastive_instances).map(|i| (2, i)));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let rows = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(suite, i)| match suite {
                0 => factor_row(&inst.b_star, params.c1, mc_count, i, &base),
                1 => gmm_row(&inst.gmm_truth, mc_count, i, &base),
                _ => contrastive_row(&inst.theta_star, &inst.beta_star, c3, mc_count, i, &base),
            })
            .collect()
    });
    Ok(rows)
}

/// Per-suite tallies for the summary.
pub fn suite_summary(rows: &[VerifyRow]) -> Value {
    let mut out = serde_json::Map::new();
    for suite in ["factor", "gmm", "contrastive"] {
        let sel: Vec<&VerifyRow> = rows.iter().filter(|r| r.suite == suite).collect();
        let max_ratio = sel.iter().filter_map(|r| r.empirical_ratio).fold(0.0f64, f64::max);
        out.insert(
            suite.into(),
            json!({
                "instances": sel.len(),
                "holds": sel.iter().filter(|r| r.holds).count(),
                "errors": sel.iter().filter(|r| r.error.is_some()).count(),
                "max_empirical_ratio": max_ratio,
                "kappa": sel.iter().find_map(|r| r.kappa),
            }),
        );
    }
    Value::Object(out)
}

pub fn verify_csv(rows: &[VerifyRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    Ok(String::from_utf8(writer.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?)
}
