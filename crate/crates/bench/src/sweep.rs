//! Sweep execution. One job per `(m, trial)`: the pretraining phase runs once
//! and is reused for every `n`, and pipeline and baseline see the same
//! labeled draws. Rows are sorted by key, so the worker count cannot change
//! the output.

use anyhow::{anyhow, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pretrain_core::contrastive::{self, AscentConfig, ContrastiveModel};
use pretrain_core::counterexample::{self, DiscretePhi, DiscretePsi};
use pretrain_core::erm::PgdConfig;
use pretrain_core::factor::{self, FactorErmMethod, FactorModel, RegressionBeta};
use pretrain_core::gmm::{self, GmmModel, LabelerPsi};
use pretrain_core::rng::mix64;
use pretrain_core::RngStream;

use crate::config::{ContrastiveParams, ErmMethod, ExperimentConfig, FactorParams, GmmParams, Instantiation};

pub const PIPELINE: &str = "pipeline";
pub const BASELINE: &str = "baseline";

/// One `(cell, trial, method)` measurement; field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment_id: String,
    pub instantiation: String,
    pub method: String,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub r_or_k: usize,
    pub trial: usize,
    pub seed: u64,
    pub excess_risk: Option<f64>,
    pub excess_risk_se: Option<f64>,
    pub aux_tv: Option<f64>,
    pub aux_align_residual: Option<f64>,
    pub failed: bool,
}

/// Seed recorded for a trial; every stream of the trial is split from it.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    mix64(master_seed, trial as u64)
}

fn trial_stream(master_seed: u64, trial: usize) -> RngStream {
    RngStream::new(master_seed, trial as u64)
}

#[derive(Clone, Copy, Debug, Default)]
struct Measurement {
    excess: f64,
    se: f64,
    aux_tv: Option<f64>,
    aux_residual: Option<f64>,
}

/// Results of one job keyed by `(n index, method index)`.
type JobOutput = Vec<((usize, usize), Result<Measurement>)>;

/// Runs the whole sweep on a pool of `jobs` workers.
pub fn run_sweep(config: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let runner = Runner::new(config)?;
    let trials = config.experiment.trials;
    let keys: Vec<(usize, usize)> = (0..config.sweep.m.len())
        .flat_map(|mi| (0..trials).map(move |t| (mi, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let outputs: Vec<((usize, usize), JobOutput)> = pool.install(|| {
        keys.par_iter()
            .map(|&(mi, trial)| ((mi, trial), runner.job(config.sweep.m[mi], trial)))
            .collect()
    });

    let mut keyed = Vec::new();
    for ((mi, trial), output) in outputs {
        for ((ni, method), result) in output {
            keyed.push(((mi, ni, trial, method), runner.row(config, mi, ni, trial, method, result)));
        }
    }
    keyed.sort_by_key(|(k, _)| *k);
    Ok(keyed.into_iter().map(|(_, row)| row).collect())
}

enum Instance {
    Factor {
        model: FactorModel,
        beta: RegressionBeta,
        method: FactorErmMethod,
        pgd: PgdConfig,
    },
    Gmm {
        model: GmmModel,
        psi: LabelerPsi,
        restarts: usize,
    },
    Contrastive {
        model: ContrastiveModel,
        beta: RegressionBeta,
        ascent: AscentConfig,
        pgd: PgdConfig,
    },
    Counter,
}

struct Runner {
    instance: Instance,
    master_seed: u64,
    ns: Vec<usize>,
    mc_count: usize,
    d: usize,
    r_or_k: usize,
}

fn unit_direction(r: usize, rng: &mut RngStream) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(r, |_, _| rng.standard_normal());
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

pub fn factor_instance(p: &FactorParams) -> Result<(FactorModel, RegressionBeta)> {
    let mut rng = RngStream::new(p.instance_seed, 0);
    let model = FactorModel::with_singular_values(p.d, &p.singular_values, p.norm_bound, &mut rng)?;
    let beta = unit_direction(p.singular_values.len(), &mut rng) * p.beta_norm;
    Ok((model, RegressionBeta::new(beta, p.norm_bound, p.noise_std)?))
}

/// Centers `a·eᵢ` with `a√2 = factor·100√(d ln K)`; bits alternate 1, 0, ...
pub fn gmm_instance(p: &GmmParams) -> Result<(GmmModel, LabelerPsi)> {
    if p.k > p.d {
        return Err(anyhow!("axis-aligned centers need K <= d"));
    }
    let spacing = if p.k > 1 {
        100.0 * (p.d as f64 * (p.k as f64).ln()).sqrt()
    } else {
        0.0
    };
    let a = p.separation_factor * spacing / 2f64.sqrt();
    let centers = DMatrix::from_fn(p.k, p.d, |i, j| if i == j { a } else { 0.0 });
    let model = GmmModel::new(centers, p.norm_scale)?;
    let bits = p.bits.clone().unwrap_or_else(|| (0..p.k).map(|i| ((i + 1) % 2) as u8).collect());
    Ok((model, LabelerPsi::new(bits, p.eps)?))
}

pub fn contrastive_instance(p: &ContrastiveParams) -> Result<(ContrastiveModel, RegressionBeta)> {
    let mut rng = RngStream::new(p.instance_seed, 0);
    let model = ContrastiveModel::with_singular_values(p.d, &p.singular_values, &mut rng)?;
    let beta = unit_direction(p.singular_values.len(), &mut rng) * p.beta_norm;
    Ok((model, RegressionBeta::new(beta, p.norm_bound, p.noise_std)?))
}

impl Runner {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        let missing = || anyhow!("missing parameter section for {}", config.experiment.instantiation.as_str());
        let (instance, d, r_or_k) = match config.experiment.instantiation {
            Instantiation::Factor => {
                let p = config.factor.as_ref().ok_or_else(missing)?;
                let (model, beta) = factor_instance(p)?;
                let method = match p.erm_method {
                    ErmMethod::FastRateOls => FactorErmMethod::FastRateOls,
                    ErmMethod::TruncatedProjected => FactorErmMethod::TruncatedProjected,
                };
                let pgd = PgdConfig {
                    iterations: p.optimizer.iterations,
                    restarts: p.optimizer.restarts,
                    ..PgdConfig::default()
                };
                let (d, r) = (model.d(), model.r());
                (Instance::Factor { model, beta, method, pgd }, d, r)
            }
            Instantiation::Gmm => {
                let p = config.gmm.as_ref().ok_or_else(missing)?;
                let (model, psi) = gmm_instance(p)?;
                let (d, k) = (model.d(), model.k());
                (Instance::Gmm { model, psi, restarts: p.restarts }, d, k)
            }
            Instantiation::Contrastive => {
                let p = config.contrastive.as_ref().ok_or_else(missing)?;
                let (model, beta) = contrastive_instance(p)?;
                let ascent = AscentConfig {
                    iterations: p.iterations,
                    restarts: p.restarts,
                    ..AscentConfig::default()
                };
                let pgd = PgdConfig {
                    iterations: p.downstream.iterations,
                    restarts: p.downstream.restarts,
                    ..PgdConfig::default()
                };
                let (d, r) = (model.d(), model.r());
                (Instance::Contrastive { model, beta, ascent, pgd }, d, r)
            }
            // one input coordinate, two candidate labelers
            Instantiation::Counterexample => (Instance::Counter, 1, 2),
        };
        Ok(Self {
            instance,
            master_seed: config.experiment.master_seed,
            ns: config.sweep.n.clone(),
            mc_count: config.experiment.mc_count,
            d,
            r_or_k,
        })
    }

    fn row(&self, config: &ExperimentConfig, mi: usize, ni: usize, trial: usize, method: usize, result: Result<Measurement>) -> SweepRow {
        let (excess_risk, excess_risk_se, aux_tv, aux_align_residual, failed) = match result {
            Ok(mv) => (Some(mv.excess), Some(mv.se), mv.aux_tv, mv.aux_residual, false),
            Err(e) => {
                log::warn!("m={} n={} trial={trial}: {e:#}", config.sweep.m[mi], config.sweep.n[ni]);
                (None, None, None, None, true)
            }
        };
        SweepRow {
            experiment_id: config.experiment.id.clone(),
            instantiation: config.experiment.instantiation.as_str().to_string(),
            method: if method == 0 { PIPELINE } else { BASELINE }.to_string(),
            m: config.sweep.m[mi],
            n: config.sweep.n[ni],
            d: self.d,
            r_or_k: self.r_or_k,
            trial,
            seed: trial_seed(self.master_seed, trial),
            excess_risk,
            excess_risk_se,
            aux_tv,
            aux_align_residual,
            failed,
        }
    }

    fn job(&self, m: usize, trial: usize) -> JobOutput {
        let base = trial_stream(self.master_seed, trial);
        let fail_all = |e: anyhow::Error| -> JobOutput {
            let msg = format!("{e:#}");
            (0..self.ns.len())
                .flat_map(|ni| (0..2).map(move |meth| (ni, meth)))
                .map(|k| (k, Err(anyhow!(msg.clone()))))
                .collect()
        };
        match &self.instance {
            Instance::Factor { model, beta, method, pgd } => {
                self.factor_job(model, beta, *method, pgd, m, &base).unwrap_or_else(fail_all)
            }
            Instance::Gmm { model, psi, restarts } => self.gmm_job(model, psi, *restarts, m, &base).unwrap_or_else(fail_all),
            Instance::Contrastive { model, beta, ascent, pgd } => {
                self.contrastive_job(model, beta, ascent, pgd, m, &base).unwrap_or_else(fail_all)
            }
            Instance::Counter => self.counter_job(m, &base).unwrap_or_else(fail_all),
        }
    }

    fn factor_job(
        &self,
        model: &FactorModel,
        beta: &RegressionBeta,
        method: FactorErmMethod,
        pgd: &PgdConfig,
        m: usize,
        base: &RngStream,
    ) -> Result<JobOutput> {
        let unlabeled = factor::sample_factor_unlabeled(model, m, &mut base.split_named("unlabeled", m as u64));
        let mle = factor::mle_factor(&unlabeled, model.r())?;
        drop(unlabeled);
        let rotation = factor::align_rotation_factor(&mle.b_hat, model.loading())?;
        let residual = (&mle.b_hat * rotation - model.loading()).norm();
        let mut out = Vec::new();
        for (ni, &n) in self.ns.iter().enumerate() {
            let labeled = factor::sample_factor_labeled_data(model, beta, n, &mut base.split_named("labeled", n as u64))?;
            let pgd_n = PgdConfig {
                seed: base.split_named("erm", n as u64).stream_id(),
                ..pgd.clone()
            };
            let pipeline = factor::fit_factor_downstream(&mle, &labeled, method, beta.norm_bound(), &pgd_n).and_then(|fit| {
                factor::excess_risk_factor_closed(model.loading(), beta.beta(), &fit.b_hat, &fit.beta_hat)
            });
            out.push((
                (ni, 0),
                pipeline.map(|e| Measurement {
                    excess: e,
                    se: 0.0,
                    aux_tv: None,
                    aux_residual: Some(residual),
                })
                .map_err(Into::into),
            ));
            let baseline = factor::supervised_baseline_factor(&labeled)
                .and_then(|fit| factor::excess_risk_linear(model.loading(), beta.beta(), &fit.beta));
            out.push((
                (ni, 1),
                baseline.map(|e| Measurement {
                    excess: e,
                    ..Measurement::default()
                })
                .map_err(Into::into),
            ));
        }
        Ok(out)
    }

    fn gmm_job(&self, model: &GmmModel, psi_star: &LabelerPsi, restarts: usize, m: usize, base: &RngStream) -> Result<JobOutput> {
        let unlabeled = gmm::sample_gmm_unlabeled(model, m, &mut base.split_named("unlabeled", m as u64));
        let fit = gmm::mle_gmm(&unlabeled, model.k(), restarts, &mut base.split_named("em", m as u64))?;
        drop(unlabeled);
        let diagnostics = |centers: &DMatrix<f64>| -> Result<(f64, f64)> {
            let matching = gmm::match_permutation(centers, model.centers())?;
            let tv = gmm::matched_joint_tv(centers, model.centers(), &matching)?;
            let residual = (gmm::permute_rows(centers, &matching.perm) - model.centers()).norm();
            Ok((tv, residual))
        };
        let (tv, residual) = diagnostics(&fit.centers)?;
        let mut out = Vec::new();
        for (ni, &n) in self.ns.iter().enumerate() {
            let labeled = gmm::sample_gmm_labeled_data(model, psi_star, n, &mut base.split_named("labeled", n as u64))?;
            let test = base.split_named("test", n as u64);
            let pipeline = gmm::erm_psi(&fit.centers, &labeled, psi_star.eps()).and_then(|psi| {
                gmm::excess_risk_gmm(model, psi_star, &fit.centers, &psi.psi, self.mc_count, &mut test.clone())
            });
            out.push((
                (ni, 0),
                pipeline.map_err(Into::into).map(|r| Measurement {
                    excess: r.value,
                    se: r.std_error,
                    aux_tv: Some(tv),
                    aux_residual: Some(residual),
                }),
            ));
            let baseline = (|| -> Result<Measurement> {
                let own = gmm::mle_gmm(&labeled.x, model.k(), restarts, &mut base.split_named("baseline-em", n as u64))?;
                let psi = gmm::erm_psi(&own.centers, &labeled, psi_star.eps())?;
                let r = gmm::excess_risk_gmm(model, psi_star, &own.centers, &psi.psi, self.mc_count, &mut test.clone())?;
                let (tv, residual) = diagnostics(&own.centers)?;
                Ok(Measurement {
                    excess: r.value,
                    se: r.std_error,
                    aux_tv: Some(tv),
                    aux_residual: Some(residual),
                })
            })();
            out.push(((ni, 1), baseline));
        }
        Ok(out)
    }

    fn contrastive_job(
        &self,
        model: &ContrastiveModel,
        beta: &RegressionBeta,
        ascent: &AscentConfig,
        pgd: &PgdConfig,
        m: usize,
        base: &RngStream,
    ) -> Result<JobOutput> {
        let pairs = contrastive::sample_pairs(model, m, &mut base.split_named("unlabeled", m as u64));
        let fit = contrastive::mle_contrastive(&pairs, model.r(), ascent, &mut base.split_named("ascent", m as u64))?;
        drop(pairs);
        let hellinger = contrastive::hellinger_pairs(&fit.theta, model.theta(), self.mc_count, &mut base.split_named("hellinger", m as u64))?;
        let alignment = contrastive::align_orthogonal_contrastive(&fit.theta, model.theta(), self.mc_count, &mut base.split_named("align", m as u64))?;
        let residual = (alignment.rotation * &fit.theta - model.theta()).norm() / (model.d() as f64).sqrt();
        let mut out = Vec::new();
        for (ni, &n) in self.ns.iter().enumerate() {
            let labeled = contrastive::sample_contrastive_labeled(model, beta, n, &mut base.split_named("labeled", n as u64))?;
            let pgd_n = PgdConfig {
                seed: base.split_named("erm", n as u64).stream_id(),
                ..pgd.clone()
            };
            let pipeline = contrastive::fit_contrastive_downstream(&fit.theta, &labeled, beta.norm_bound(), &pgd_n)
                .and_then(|b| contrastive::excess_risk_contrastive(model.theta(), beta.beta(), &fit.theta, &b.beta));
            out.push((
                (ni, 0),
                pipeline.map_err(Into::into).map(|e| Measurement {
                    excess: e,
                    se: 0.0,
                    aux_tv: Some(hellinger.value),
                    aux_residual: Some(residual),
                }),
            ));
            let baseline = contrastive::supervised_baseline_contrastive(&labeled)
                .and_then(|w| contrastive::excess_risk_contrastive_linear(model.theta(), beta.beta(), &w));
            out.push((
                (ni, 1),
                baseline.map_err(Into::into).map(|e| Measurement {
                    excess: e,
                    ..Measurement::default()
                }),
            ));
        }
        Ok(out)
    }

    fn counter_job(&self, m: usize, base: &RngStream) -> Result<JobOutput> {
        let mut u_rng = base.split_named("unlabeled", m as u64);
        let unlabeled: Vec<u32> = (0..m).map(|_| counterexample::sample_geometric(&mut u_rng)).collect();
        let mut out = Vec::new();
        for (ni, &n) in self.ns.iter().enumerate() {
            let mut l_rng = base.split_named("labeled", n as u64);
            let labeled = (0..n)
                .map(|_| {
                    let x = counterexample::sample_geometric(&mut l_rng);
                    (x, x)
                })
                .collect();
            let sample = counterexample::CounterSample {
                unlabeled: unlabeled.clone(),
                labeled,
            };
            let measure = |(phi, psi): (DiscretePhi, DiscretePsi)| Measurement {
                excess: counterexample::tv_counter(phi, psi),
                se: 0.0,
                aux_tv: Some(counterexample::tv_counter_between(
                    (phi, DiscretePsi::Psi1),
                    (DiscretePhi::truth(), DiscretePsi::Psi1),
                )),
                aux_residual: None,
            };
            out.push(((ni, 0), counterexample::mle_erm_counter(&sample).map(measure).map_err(Into::into)));
            out.push(((ni, 1), counterexample::two_phase_mle(&sample).map(measure).map_err(Into::into)));
        }
        Ok(out)
    }
}
