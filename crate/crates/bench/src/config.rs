//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instantiation {
    Factor,
    Gmm,
    Contrastive,
    Counterexample,
}

impl Instantiation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Instantiation::Factor => "factor",
            Instantiation::Gmm => "gmm",
            Instantiation::Contrastive => "contrastive",
            Instantiation::Counterexample => "counterexample",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub sweep: Sweep,
    pub factor: Option<FactorParams>,
    pub gmm: Option<GmmParams>,
    pub contrastive: Option<ContrastiveParams>,
    pub verify: Option<VerifyParams>,
    #[serde(default)]
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub id: String,
    pub instantiation: Instantiation,
    pub master_seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    /// Monte-Carlo draws for risk and divergence estimates.
    #[serde(default = "default_mc")]
    pub mc_count: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub n: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErmMethod {
    TruncatedProjected,
    FastRateOls,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorParams {
    pub d: usize,
    pub singular_values: Vec<f64>,
    pub beta_norm: f64,
    #[serde(default = "two")]
    pub norm_bound: f64,
    #[serde(default = "one_f")]
    pub noise_std: f64,
    #[serde(default)]
    pub instance_seed: u64,
    #[serde(default = "default_erm")]
    pub erm_method: ErmMethod,
    #[serde(default)]
    pub optimizer: PgdParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdParams {
    #[serde(default = "default_pgd_iterations")]
    pub iterations: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

impl Default for PgdParams {
    fn default() -> Self {
        Self {
            iterations: default_pgd_iterations(),
            restarts: default_restarts(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmParams {
    pub k: usize,
    pub d: usize,
    pub eps: f64,
    /// Centers are `a·eᵢ` with `a` this multiple of the smallest separated spacing.
    #[serde(default = "one_f")]
    pub separation_factor: f64,
    #[serde(default = "default_gmm_scale")]
    pub norm_scale: f64,
    #[serde(default = "default_em_restarts")]
    pub restarts: usize,
    /// Labeler bits; alternating 1, 0, ... when omitted.
    #[serde(default)]
    pub bits: Option<Vec<u8>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveParams {
    pub d: usize,
    pub singular_values: Vec<f64>,
    pub beta_norm: f64,
    #[serde(default = "one_f")]
    pub norm_bound: f64,
    #[serde(default = "one_f")]
    pub noise_std: f64,
    #[serde(default)]
    pub instance_seed: u64,
    #[serde(default = "default_ascent_iterations")]
    pub iterations: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub downstream: PgdParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {
    pub factor_instances: usize,
    pub gmm_instances: usize,
    pub contrastive_instances: usize,
    #[serde(default = "default_c1")]
    pub c1: f64,
    /// Defaults to the proof constant when omitted.
    pub c3: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    M,
    N,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::M => "m",
            Axis::N => "n",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// Log-log slope of median excess risk along one axis.
    Rate { axis: Axis, target: f64, tolerance: f64 },
    /// Paired pipeline-vs-baseline comparison at a single cell.
    Benefit {
        min_win_fraction: f64,
        max_median_ratio: f64,
    },
    /// Median Hellinger of the pretrained model at the largest m.
    Hellinger { max: f64 },
    /// Frequency of TV ≥ threshold for the two-phase MLE rows.
    Failure { tv_threshold: f64, target: f64 },
    /// Every instance of the informativeness suites satisfies its inequality.
    Informative,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn default_mc() -> usize {
    100_000
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_erm() -> ErmMethod {
    ErmMethod::FastRateOls
}
fn default_pgd_iterations() -> usize {
    500
}
fn default_restarts() -> usize {
    5
}
fn default_ascent_iterations() -> usize {
    2000
}
fn default_em_restarts() -> usize {
    8
}
fn default_gmm_scale() -> f64 {
    100.0
}
fn default_c1() -> f64 {
    500.0
}

/// A parsed configuration together with the hash of its source text.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

impl LoadedConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))?;
        config.validate()?;
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(Self { config, hash })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.trials == 0 || e.mc_count == 0 {
            bail!("trials and mc_count must be at least 1");
        }
        if self.verify.is_some() {
            return Ok(());
        }
        if self.sweep.m.is_empty() || self.sweep.n.is_empty() {
            bail!("sweep.m and sweep.n must be nonempty");
        }
        if self.sweep.m.iter().chain(&self.sweep.n).any(|&v| v == 0) {
            bail!("sweep sizes must be positive");
        }
        match e.instantiation {
            Instantiation::Factor if self.factor.is_none() => bail!("missing [factor] section"),
            Instantiation::Gmm if self.gmm.is_none() => bail!("missing [gmm] section"),
            Instantiation::Contrastive if self.contrastive.is_none() => bail!("missing [contrastive] section"),
            _ => {}
        }
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn override_with(&mut self, seed: Option<u64>, trials: Option<usize>, mc_count: Option<usize>, out: Option<PathBuf>) {
        if let Some(s) = seed {
            self.experiment.master_seed = s;
        }
        if let Some(t) = trials {
            self.experiment.trials = t;
        }
        if let Some(c) = mc_count {
            self.experiment.mc_count = c;
        }
        if let Some(o) = out {
            self.experiment.out_dir = o;
        }
    }
}

/// Configurations shipped with the crate; they back the subcommand defaults.
pub mod builtin {
    pub const FACTOR_M_AXIS: &str = include_str!("../../../configs/factor_m_axis.toml");
    pub const FACTOR_N_AXIS: &str = include_str!("../../../configs/factor_n_axis.toml");
    pub const FACTOR_BENEFIT: &str = include_str!("../../../configs/factor_benefit.toml");
    pub const GMM_N_AXIS: &str = include_str!("../../../configs/gmm_n_axis.toml");
    pub const CONTRASTIVE_N_AXIS: &str = include_str!("../../../configs/contrastive_n_axis.toml");
    pub const COUNTEREXAMPLE: &str = include_str!("../../../configs/counterexample.toml");
    pub const VERIFY: &str = include_str!("../../../configs/verify.toml");
}
