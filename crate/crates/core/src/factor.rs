//! Linear factor model `x = Bz + μ`, `y = βᵀz + ν` with `z ∼ N(0, I_r)`,
//! `μ ∼ N(0, I_d)`, `ν ∼ N(0, ε²)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::data::LabeledData;
use crate::erm::{ols, truncated_erm, PgdConfig};
use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{lstsq_min_norm, orthogonal_polar, singular_values, solve_psd, spectral_norm, sym_eigen_desc};
use crate::losses::{factor_truncation_level, LabeledSampler};
use crate::prob::{estimate_tv, DensityEvaluator, DivergenceEstimate, GaussianDensity, MvnParams, Sampler};
use crate::rng::RngStream;

const NORM_SLACK: f64 = 1e-12;

/// Loading matrix `B` (d×r) with its spectral-norm bound `D`.
#[derive(Clone, Debug)]
pub struct FactorModel {
    loading: DMatrix<f64>,
    norm_bound: f64,
}

impl FactorModel {
    pub fn new(loading: DMatrix<f64>, norm_bound: f64) -> Result<Self> {
        let (d, r) = loading.shape();
        if d < 2 || r < 1 || r >= d {
            return Err(invalid(format!("need 1 <= r < d and d > 1, got d={d}, r={r}")));
        }
        if !(norm_bound > 0.0) {
            return Err(invalid("norm bound must be positive"));
        }
        let norm = spectral_norm(&loading);
        if norm > norm_bound * (1.0 + NORM_SLACK) {
            return Err(invalid(format!("‖B‖₂ = {norm} exceeds bound {norm_bound}")));
        }
        Ok(Self { loading, norm_bound })
    }

    /// Random loading `U·diag(s)·V` with orthonormal `U` and orthogonal `V`.
    pub fn with_singular_values(d: usize, singular: &[f64], norm_bound: f64, rng: &mut RngStream) -> Result<Self> {
        let r = singular.len();
        if r == 0 || r >= d {
            return Err(invalid("need 1 <= r < d"));
        }
        let u = crate::linalg::random_orthonormal_columns(d, r, rng);
        let v = crate::linalg::random_orthogonal(r, rng);
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(singular));
        Self::new(u * s * v, norm_bound)
    }

    pub fn loading(&self) -> &DMatrix<f64> {
        &self.loading
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn d(&self) -> usize {
        self.loading.nrows()
    }

    pub fn r(&self) -> usize {
        self.loading.ncols()
    }

    /// Marginal covariance `BBᵀ + I`.
    pub fn covariance(&self) -> DMatrix<f64> {
        marginal_covariance(&self.loading)
    }
}

/// Downstream coefficients `β` with bound `D` and noise scale `ε`.
#[derive(Clone, Debug)]
pub struct RegressionBeta {
    beta: DVector<f64>,
    norm_bound: f64,
    noise_std: f64,
}

impl RegressionBeta {
    pub fn new(beta: DVector<f64>, norm_bound: f64, noise_std: f64) -> Result<Self> {
        if !(norm_bound > 0.0) || !(noise_std > 0.0) {
            return Err(invalid("norm bound and noise scale must be positive"));
        }
        if beta.norm() > norm_bound * (1.0 + NORM_SLACK) {
            return Err(invalid(format!("‖β‖ = {} exceeds bound {norm_bound}", beta.norm())));
        }
        Ok(Self {
            beta,
            norm_bound,
            noise_std,
        })
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorErmMethod {
    TruncatedProjected,
    FastRateOls,
}

impl FactorErmMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FactorErmMethod::TruncatedProjected => "truncated_projected",
            FactorErmMethod::FastRateOls => "fast_rate_ols",
        }
    }
}

#[derive(Clone, Debug)]
pub struct FactorMle {
    pub b_hat: DMatrix<f64>,
    /// Eigenvalues of Σ̂ below 1 among the top r.
    pub clamped_eigencount: usize,
}

#[derive(Clone, Debug)]
pub struct FactorFitReport {
    pub b_hat: DMatrix<f64>,
    pub beta_hat: DVector<f64>,
    pub clamped_eigencount: usize,
    pub erm_method: FactorErmMethod,
    /// The downstream solver used a fallback (pseudo-inverse or iteration budget).
    pub flagged: bool,
}

pub fn marginal_covariance(loading: &DMatrix<f64>) -> DMatrix<f64> {
    let d = loading.nrows();
    loading * loading.transpose() + DMatrix::identity(d, d)
}

fn fill_normal(rows: usize, cols: usize, rng: &mut RngStream) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

pub fn sample_factor_unlabeled(model: &FactorModel, m: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let z = fill_normal(m, model.r(), rng);
    let noise = fill_normal(m, model.d(), rng);
    z * model.loading.transpose() + noise
}

pub fn sample_factor_labeled_data(
    model: &FactorModel,
    beta: &RegressionBeta,
    n: usize,
    rng: &mut RngStream,
) -> Result<LabeledData> {
    check_dim(model.r(), beta.beta.len())?;
    let z = fill_normal(n, model.r(), rng);
    let noise = fill_normal(n, model.d(), rng);
    let nu = DVector::from_fn(n, |_, _| rng.standard_normal());
    let x = &z * model.loading.transpose() + noise;
    let y = &z * &beta.beta + nu * beta.noise_std;
    LabeledData::new(x, y)
}

/// Rows `(x, y)` as an `n×(d+1)` matrix.
pub fn sample_factor_labeled(
    model: &FactorModel,
    beta: &RegressionBeta,
    n: usize,
    rng: &mut RngStream,
) -> Result<DMatrix<f64>> {
    Ok(sample_factor_labeled_data(model, beta, n, rng)?.to_matrix())
}

/// Eigen-truncation MLE from raw samples.
pub fn mle_factor(unlabeled: &DMatrix<f64>, r: usize) -> Result<FactorMle> {
    if unlabeled.nrows() == 0 {
        return Err(Error::InsufficientData("no unlabeled samples".into()));
    }
    let sigma = unlabeled.tr_mul(unlabeled) / unlabeled.nrows() as f64;
    mle_factor_from_covariance(&sigma, r)
}

/// Eigen-truncation MLE from a second-moment matrix Σ̂:
/// `B̂ = Û_{:,1:r} diag(√max(λ̂ − 1, 0))`.
pub fn mle_factor_from_covariance(sigma: &DMatrix<f64>, r: usize) -> Result<FactorMle> {
    let d = sigma.nrows();
    check_dim(d, sigma.ncols())?;
    if d == 0 {
        return Err(Error::InsufficientData("empty covariance".into()));
    }
    if r == 0 || r >= d {
        return Err(invalid(format!("need 1 <= r < d, got r={r}, d={d}")));
    }
    let (values, vectors) = sym_eigen_desc(sigma);
    let mut b_hat = DMatrix::zeros(d, r);
    let mut clamped = 0;
    for j in 0..r {
        let lambda = values[j];
        if lambda < 1.0 {
            clamped += 1;
        }
        let scale = (lambda - 1.0).max(0.0).sqrt();
        let mut col = vectors.column(j).clone_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col = -col;
            }
        }
        b_hat.set_column(j, &(col * scale));
    }
    Ok(FactorMle {
        b_hat,
        clamped_eigencount: clamped,
    })
}

/// `log det(BBᵀ + I) + tr(Σ̂(BBᵀ + I)⁻¹)`, the negative log-likelihood up to constants.
pub fn factor_neg_log_likelihood(loading: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    let cov = marginal_covariance(loading);
    let chol = cov.cholesky().expect("BBᵀ + I is positive definite");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    log_det + (sigma * inv).trace()
}

/// Posterior-mean feature map `Ĉ = Bᵀ(BBᵀ + I)⁻¹ = (I + BᵀB)⁻¹Bᵀ` (r×d).
pub fn feature_map(loading: &DMatrix<f64>) -> DMatrix<f64> {
    let r = loading.ncols();
    let small = DMatrix::identity(r, r) + loading.tr_mul(loading);
    let chol = small.cholesky().expect("I + BᵀB is positive definite");
    chol.solve(&loading.transpose())
}

/// Linear weights `w = Ĉᵀβ` of the Bayes predictor under `(B, β)`.
pub fn predictor_weights(loading: &DMatrix<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(loading.ncols(), beta.len())?;
    Ok(feature_map(loading).tr_mul(beta))
}

/// `βᵀBᵀ(BBᵀ + I)⁻¹x`.
pub fn predictor_factor(loading: &DMatrix<f64>, beta: &DVector<f64>, x: &[f64]) -> Result<f64> {
    check_dim(loading.nrows(), x.len())?;
    let w = predictor_weights(loading, beta)?;
    Ok(w.iter().zip(x).map(|(a, b)| a * b).sum())
}

fn features(b_hat: &DMatrix<f64>, labeled: &LabeledData) -> Result<DMatrix<f64>> {
    check_dim(b_hat.nrows(), labeled.dim())?;
    Ok(&labeled.x * feature_map(b_hat).transpose())
}

#[derive(Clone, Debug)]
pub struct BetaFit {
    pub beta: DVector<f64>,
    pub flagged: bool,
}

/// Truncated-squared-loss ERM over `‖β‖₂ ≤ D` on features `Ĉx`.
pub fn erm_beta_truncated(
    b_hat: &DMatrix<f64>,
    labeled: &LabeledData,
    level: f64,
    norm_bound: f64,
    config: &PgdConfig,
) -> Result<BetaFit> {
    if !(level > 0.0) || !(norm_bound > 0.0) {
        return Err(invalid("truncation level and norm bound must be positive"));
    }
    let u = features(b_hat, labeled)?;
    let fit = truncated_erm(&u, &labeled.y, level, norm_bound, config);
    let flagged = !fit.converged || !fit.certified();
    Ok(BetaFit { beta: fit.beta, flagged })
}

/// Exact least squares on features `Ĉx`.
pub fn erm_beta_ols(b_hat: &DMatrix<f64>, labeled: &LabeledData) -> Result<BetaFit> {
    let u = features(b_hat, labeled)?;
    let fit = ols(&u, &labeled.y);
    Ok(BetaFit {
        beta: fit.beta,
        flagged: fit.pseudo_inverse,
    })
}

/// Excess squared-loss risk of an arbitrary linear predictor `wᵀx`:
/// `vᵀ(B*B*ᵀ + I)v` with `v = C*ᵀβ* − w`.
pub fn excess_risk_linear(b_star: &DMatrix<f64>, beta_star: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    check_dim(b_star.nrows(), w.len())?;
    let v = predictor_weights(b_star, beta_star)? - w;
    let bv = b_star.tr_mul(&v);
    Ok((bv.norm_squared() + v.norm_squared()).max(0.0))
}

pub fn excess_risk_factor_closed(
    b_star: &DMatrix<f64>,
    beta_star: &DVector<f64>,
    b_hat: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
) -> Result<f64> {
    check_dim(b_star.nrows(), b_hat.nrows())?;
    let w = predictor_weights(b_hat, beta_hat)?;
    excess_risk_linear(b_star, beta_star, &w)
}

/// Frobenius-optimal orthogonal `Ô = argmin ‖BO − B*‖_F`.
pub fn align_rotation_factor(loading: &DMatrix<f64>, b_star: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(b_star.nrows(), loading.nrows())?;
    check_dim(b_star.ncols(), loading.ncols())?;
    Ok(orthogonal_polar(&loading.tr_mul(b_star)))
}

/// `κ = c₁(σ_max + 1)⁴ / σ_min³` for the true loading.
pub fn kappa(b_star: &DMatrix<f64>, c1: f64) -> Result<f64> {
    let s = singular_values(b_star);
    let smax = s[0];
    let smin = s[s.len() - 1];
    if smin <= 0.0 {
        return Err(Error::Precondition("σ_min(B*) must be positive".into()));
    }
    Ok(c1 * (smax + 1.0).powi(4) / smin.powi(3))
}

/// Joint law of `(x, z)`; points are laid out as `[x; z]`.
#[derive(Clone, Debug)]
pub struct FactorJoint {
    loading: DMatrix<f64>,
}

impl FactorJoint {
    pub fn new(loading: DMatrix<f64>) -> Self {
        Self { loading }
    }
}

impl DensityEvaluator for FactorJoint {
    fn dim(&self) -> usize {
        self.loading.nrows() + self.loading.ncols()
    }

    fn log_density(&self, point: &[f64]) -> f64 {
        let (d, r) = self.loading.shape();
        let (x, z) = point.split_at(d);
        let mut quad: f64 = z.iter().map(|v| v * v).sum();
        for i in 0..d {
            let mut mean = 0.0;
            for j in 0..r {
                mean += self.loading[(i, j)] * z[j];
            }
            quad += (x[i] - mean).powi(2);
        }
        -0.5 * quad - 0.5 * (d + r) as f64 * (2.0 * PI).ln()
    }
}

impl Sampler for FactorJoint {
    fn dim(&self) -> usize {
        self.loading.nrows() + self.loading.ncols()
    }

    fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let (d, r) = self.loading.shape();
        for j in 0..r {
            out[d + j] = rng.standard_normal();
        }
        for i in 0..d {
            let mut v = rng.standard_normal();
            for j in 0..r {
                v += self.loading[(i, j)] * out[d + j];
            }
            out[i] = v;
        }
    }
}

/// Test-time sampler of `(x, y)` under the ground truth.
pub struct FactorLabeledSampler<'a> {
    pub model: &'a FactorModel,
    pub beta: &'a RegressionBeta,
}

impl LabeledSampler for FactorLabeledSampler<'_> {
    fn input_dim(&self) -> usize {
        self.model.d()
    }

    fn sample_pair(&self, rng: &mut RngStream, x_out: &mut [f64]) -> f64 {
        let (d, r) = self.model.loading.shape();
        let z: Vec<f64> = (0..r).map(|_| rng.standard_normal()).collect();
        for i in 0..d {
            let mut v = rng.standard_normal();
            for j in 0..r {
                v += self.model.loading[(i, j)] * z[j];
            }
            x_out[i] = v;
        }
        let signal: f64 = z.iter().zip(self.beta.beta.iter()).map(|(a, b)| a * b).sum();
        signal + self.beta.noise_std * rng.standard_normal()
    }
}

#[derive(Clone, Debug)]
pub struct InformativeReport {
    pub lhs: DivergenceEstimate,
    /// TV between the marginals, before scaling by κ.
    pub marginal_tv: DivergenceEstimate,
    pub rhs: f64,
    pub kappa_used: f64,
    pub holds: bool,
}

impl InformativeReport {
    /// Smallest κ that would make the inequality hold at the point estimates.
    pub fn empirical_ratio(&self) -> f64 {
        if self.marginal_tv.value > 0.0 {
            self.lhs.value / self.marginal_tv.value
        } else if self.lhs.value > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Monte-Carlo check of `TV(P_{BÔ}(x,z), P_{B*}(x,z)) ≤ κ·TV(P_B(x), P_{B*}(x))`.
pub fn verify_informative_factor(
    loading: &DMatrix<f64>,
    b_star: &DMatrix<f64>,
    c1: f64,
    mc_count: usize,
    rng: &mut RngStream,
) -> Result<InformativeReport> {
    let kappa_used = kappa(b_star, c1)?;
    let rotation = align_rotation_factor(loading, b_star)?;
    let truth_joint = FactorJoint::new(b_star.clone());
    let fitted_joint = FactorJoint::new(loading * rotation);
    let lhs = estimate_tv(&truth_joint, &fitted_joint, &truth_joint, mc_count, rng)?;

    let d = b_star.nrows();
    let zero = DVector::zeros(d);
    let truth_cov = marginal_covariance(b_star);
    let truth_marginal = GaussianDensity::new(zero.clone(), &truth_cov)?;
    let fitted_marginal = GaussianDensity::new(zero.clone(), &marginal_covariance(loading))?;
    let sampler = MvnParams::new(zero, truth_cov)?;
    let marginal_tv = estimate_tv(&truth_marginal, &fitted_marginal, &sampler, mc_count, rng)?;

    let rhs = kappa_used * marginal_tv.value;
    let combined = (lhs.std_error.powi(2) + (kappa_used * marginal_tv.std_error).powi(2)).sqrt();
    Ok(InformativeReport {
        lhs,
        marginal_tv,
        rhs,
        kappa_used,
        holds: lhs.value <= rhs + 4.0 * combined + 1e-12,
    })
}

/// Least squares of `y` on raw `x`; minimum-norm solution when underdetermined.
pub fn supervised_baseline_factor(labeled: &LabeledData) -> Result<BetaFit> {
    if labeled.is_empty() {
        return Err(Error::InsufficientData("no labeled samples".into()));
    }
    if labeled.len() >= labeled.dim() {
        let gram = labeled.x.tr_mul(&labeled.x);
        let rhs = labeled.x.tr_mul(&labeled.y);
        let (beta, flagged) = solve_psd(&gram, &rhs);
        Ok(BetaFit { beta, flagged })
    } else {
        let (beta, flagged) = lstsq_min_norm(&labeled.x, &labeled.y);
        Ok(BetaFit { beta, flagged })
    }
}

/// Downstream phase on a fitted loading.
pub fn fit_factor_downstream(
    mle: &FactorMle,
    labeled: &LabeledData,
    method: FactorErmMethod,
    norm_bound: f64,
    pgd: &PgdConfig,
) -> Result<FactorFitReport> {
    let fit = match method {
        FactorErmMethod::TruncatedProjected => {
            let level = factor_truncation_level(norm_bound, labeled.len().max(2) as f64);
            erm_beta_truncated(&mle.b_hat, labeled, level, norm_bound, pgd)?
        }
        FactorErmMethod::FastRateOls => erm_beta_ols(&mle.b_hat, labeled)?,
    };
    Ok(FactorFitReport {
        b_hat: mle.b_hat.clone(),
        beta_hat: fit.beta,
        clamped_eigencount: mle.clamped_eigencount,
        erm_method: method,
        flagged: fit.flagged,
    })
}

/// Both phases from raw data.
pub fn pipeline_factor(
    unlabeled: &DMatrix<f64>,
    labeled: &LabeledData,
    r: usize,
    method: FactorErmMethod,
    norm_bound: f64,
    pgd: &PgdConfig,
) -> Result<FactorFitReport> {
    let mle = mle_factor(unlabeled, r)?;
    fit_factor_downstream(&mle, labeled, method, norm_bound, pgd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthogonal;

    fn b_col() -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, &[2.0, 0.0, 0.0])
    }

    #[test]
    fn predictor_hand_value() {
        let beta = DVector::from_vec(vec![1.0]);
        let v = predictor_factor(&b_col(), &beta, &[1.0, 0.0, 0.0]).unwrap();
        assert!((v - 0.4).abs() < 1e-12);
        let zero = DMatrix::zeros(3, 1);
        assert_eq!(predictor_factor(&zero, &beta, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn mle_diagonal_and_identity() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 1.0, 1.0]));
        let mle = mle_factor_from_covariance(&sigma, 1).unwrap();
        assert!((mle.b_hat[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(mle.b_hat[(1, 0)].abs() < 1e-12 && mle.b_hat[(2, 0)].abs() < 1e-12);
        let eye = DMatrix::identity(4, 4);
        let mle = mle_factor_from_covariance(&eye, 2).unwrap();
        assert!(mle.b_hat.norm() < 1e-12);
        assert!(mle_factor_from_covariance(&eye, 4).is_err());
    }

    #[test]
    fn kappa_plug_in() {
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0])).insert_rows(2, 1, 0.0);
        assert!((kappa(&b, 500.0).unwrap() - 5062.5).abs() < 1e-9);
        assert!(kappa(&DMatrix::zeros(3, 1), 500.0).is_err());
    }

    #[test]
    fn excess_zero_under_rotation() {
        let mut rng = RngStream::new(4, 0);
        let model = FactorModel::with_singular_values(6, &[1.5, 0.8], 2.0, &mut rng).unwrap();
        let beta = DVector::from_vec(vec![0.7, -1.1]);
        let o = random_orthogonal(2, &mut rng);
        let b = model.loading();
        let e = excess_risk_factor_closed(b, &beta, &(b * &o), &(o.transpose() * &beta)).unwrap();
        assert!(e.abs() < 1e-12);
    }

    #[test]
    fn informative_identical_loading() {
        let mut rng = RngStream::new(9, 0);
        let model = FactorModel::with_singular_values(4, &[1.5, 1.0], 2.0, &mut rng).unwrap();
        let report = verify_informative_factor(model.loading(), model.loading(), 500.0, 2000, &mut rng).unwrap();
        assert!(report.lhs.value.abs() < 1e-12);
        assert!(report.holds);
    }
}
