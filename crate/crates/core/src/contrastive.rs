//! Pairwise logistic contrastive model with linear features `f_θ(x) = θx`,
//! `x` uniform on the unit sphere, and `P(t = 1 | x, x') = σ(f(x)ᵀf(x'))`.
//! Downstream: `y = βᵀ(f_θ(x) + μ) + ν`.

use nalgebra::{DMatrix, DVector};

use crate::data::LabeledData;
use crate::erm::{ols, truncated_erm, PgdConfig};
use crate::error::{check_dim, invalid, Error, Result};
use crate::factor::RegressionBeta;
use crate::linalg::{orthogonal_polar, random_orthogonal, random_orthonormal_columns, singular_values, spectral_norm, sym_eigen_desc};
use crate::losses::contrastive_truncation_level;
use crate::prob::{hellinger_from_squared, hellinger_squared_from_affinity, standard_normal_cdf, DivergenceEstimate, MeanAccumulator};
use crate::rng::RngStream;

/// Constant multiplying `1/√σ_min(E[ffᵀ])` in the weak-informativeness bound:
/// `½√((2 + e + e⁻¹)/(2√2 − 2))`.
pub fn default_c3() -> f64 {
    let e = std::f64::consts::E;
    0.5 * ((2.0 + e + 1.0 / e) / (2.0 * 2f64.sqrt() - 2.0)).sqrt()
}

#[inline]
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log σ(s)` without overflow.
#[inline]
fn log_sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        -(-s).exp().ln_1p()
    } else {
        s - s.exp().ln_1p()
    }
}

/// Representation `θ` (r×d) with `‖θ‖₂ ≤ 1`.
#[derive(Clone, Debug)]
pub struct ContrastiveModel {
    theta: DMatrix<f64>,
}

impl ContrastiveModel {
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        let (r, d) = theta.shape();
        if r == 0 || d == 0 {
            return Err(invalid("θ must be non-empty"));
        }
        let norm = spectral_norm(&theta);
        if norm > 1.0 + 1e-12 {
            return Err(invalid(format!("‖θ‖₂ = {norm} exceeds 1")));
        }
        Ok(Self { theta })
    }

    /// Random `θ = U·diag(s)·Vᵀ` with the given singular values (each ≤ 1).
    pub fn with_singular_values(d: usize, singular: &[f64], rng: &mut RngStream) -> Result<Self> {
        let r = singular.len();
        if r == 0 || r > d {
            return Err(invalid("need 1 <= r <= d"));
        }
        let u = random_orthogonal(r, rng);
        let v = random_orthonormal_columns(d, r, rng);
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(singular));
        Self::new(u * s * v.transpose())
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn r(&self) -> usize {
        self.theta.nrows()
    }

    pub fn d(&self) -> usize {
        self.theta.ncols()
    }

    pub fn input_radius(&self) -> f64 {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub t: f64,
}

/// `m` pairs stored as row matrices; `t ∈ {−1, +1}`.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub x: DMatrix<f64>,
    pub x_prime: DMatrix<f64>,
    pub t: DVector<f64>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn get(&self, i: usize) -> PairSample {
        PairSample {
            x: self.x.row(i).iter().copied().collect(),
            x_prime: self.x_prime.row(i).iter().copied().collect(),
            t: self.t[i],
        }
    }

    pub fn select(&self, rows: &[usize]) -> PairSet {
        PairSet {
            x: self.x.select_rows(rows),
            x_prime: self.x_prime.select_rows(rows),
            t: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.t[i])),
        }
    }
}

fn fill_sphere_row(m: &mut DMatrix<f64>, row: usize, rng: &mut RngStream) {
    let d = m.ncols();
    loop {
        let mut norm = 0.0;
        for j in 0..d {
            let v = rng.standard_normal();
            m[(row, j)] = v;
            norm += v * v;
        }
        if norm > 0.0 {
            let inv = 1.0 / norm.sqrt();
            for j in 0..d {
                m[(row, j)] *= inv;
            }
            return;
        }
    }
}

/// `count` rows uniform on the unit sphere in ℝ^d.
pub fn sample_sphere(count: usize, d: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(count, d);
    for row in 0..count {
        fill_sphere_row(&mut out, row, rng);
    }
    out
}

fn similarities(theta: &DMatrix<f64>, x: &DMatrix<f64>, x_prime: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let f = x * theta.transpose();
    let fp = x_prime * theta.transpose();
    let s = DVector::from_fn(f.nrows(), |i, _| f.row(i).dot(&fp.row(i)));
    (f, fp, s)
}

pub fn sample_pairs(model: &ContrastiveModel, m: usize, rng: &mut RngStream) -> PairSet {
    let d = model.d();
    let mut x = DMatrix::zeros(m, d);
    let mut x_prime = DMatrix::zeros(m, d);
    let mut t = DVector::zeros(m);
    let mut fx = vec![0.0; model.r()];
    for i in 0..m {
        fill_sphere_row(&mut x, i, rng);
        fill_sphere_row(&mut x_prime, i, rng);
        let mut s = 0.0;
        for (a, v) in fx.iter_mut().enumerate() {
            *v = (0..d).map(|j| model.theta[(a, j)] * x[(i, j)]).sum();
        }
        for (a, v) in fx.iter().enumerate() {
            let g: f64 = (0..d).map(|j| model.theta[(a, j)] * x_prime[(i, j)]).sum();
            s += v * g;
        }
        t[i] = if rng.uniform() < sigmoid(s) { 1.0 } else { -1.0 };
    }
    PairSet { x, x_prime, t }
}

/// Labeled rows `y = βᵀ(θx + μ) + ν`, `μ ∼ N(0, I_r)`, `ν ∼ N(0, ε²)`.
pub fn sample_contrastive_labeled(
    model: &ContrastiveModel,
    beta: &RegressionBeta,
    n: usize,
    rng: &mut RngStream,
) -> Result<LabeledData> {
    check_dim(model.r(), beta.beta().len())?;
    let x = sample_sphere(n, model.d(), rng);
    let signal = &x * (model.theta.transpose() * beta.beta());
    let y = DVector::from_fn(n, |i, _| {
        let latent: f64 = beta.beta().iter().map(|b| b * rng.standard_normal()).sum();
        signal[i] + latent + beta.noise_std() * rng.standard_normal()
    });
    LabeledData::new(x, y)
}

/// Average pair log-likelihood `(1/m) Σ log σ(tᵢ sᵢ)`.
pub fn pair_log_likelihood(theta: &DMatrix<f64>, pairs: &PairSet) -> Result<f64> {
    check_dim(pairs.dim(), theta.ncols())?;
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs".into()));
    }
    let (_, _, s) = similarities(theta, &pairs.x, &pairs.x_prime);
    Ok(s.iter().zip(pairs.t.iter()).map(|(s, t)| log_sigmoid(t * s)).sum::<f64>() / pairs.len() as f64)
}

/// Log-likelihood and its gradient in θ.
pub fn pair_log_likelihood_grad(theta: &DMatrix<f64>, pairs: &PairSet) -> Result<(f64, DMatrix<f64>)> {
    check_dim(pairs.dim(), theta.ncols())?;
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs".into()));
    }
    let m = pairs.len() as f64;
    let (mut f, mut fp, s) = similarities(theta, &pairs.x, &pairs.x_prime);
    let mut ll = 0.0;
    for i in 0..pairs.len() {
        let ts = pairs.t[i] * s[i];
        ll += log_sigmoid(ts);
        let c = pairs.t[i] * sigmoid(-ts) / m;
        f.row_mut(i).scale_mut(c);
        fp.row_mut(i).scale_mut(c);
    }
    let grad = fp.tr_mul(&pairs.x) + f.tr_mul(&pairs.x_prime);
    Ok((ll / m, grad))
}

/// Scales θ back into the spectral unit ball.
pub fn project_spectral(theta: &mut DMatrix<f64>) {
    let norm = spectral_norm(theta);
    if norm > 1.0 {
        *theta /= norm;
    }
}

#[derive(Clone, Debug)]
pub struct AscentConfig {
    pub iterations: usize,
    /// Total starts: a spectral start plus `restarts - 1` random ones.
    pub restarts: usize,
    pub tolerance: f64,
    /// Pairs used by the finite-difference gradient check; 0 disables it.
    pub gradient_check_pairs: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            restarts: 5,
            tolerance: 1e-10,
            gradient_check_pairs: 512,
        }
    }
}

pub const GRADIENT_CHECK_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct AscentRun {
    pub theta: DMatrix<f64>,
    /// Log-likelihood at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct ContrastiveFit {
    pub theta: DMatrix<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub gradient_check_error: f64,
}

/// Relative error between the analytic gradient and central differences.
pub fn gradient_check(theta: &DMatrix<f64>, pairs: &PairSet) -> Result<f64> {
    let (_, grad) = pair_log_likelihood_grad(theta, pairs)?;
    let h = 1e-5;
    let mut fd = DMatrix::zeros(theta.nrows(), theta.ncols());
    let mut probe = theta.clone();
    for a in 0..theta.nrows() {
        for j in 0..theta.ncols() {
            let orig = probe[(a, j)];
            probe[(a, j)] = orig + h;
            let up = pair_log_likelihood(&probe, pairs)?;
            probe[(a, j)] = orig - h;
            let down = pair_log_likelihood(&probe, pairs)?;
            probe[(a, j)] = orig;
            fd[(a, j)] = (up - down) / (2.0 * h);
        }
    }
    let scale = grad.norm().max(fd.norm()).max(1e-4);
    Ok((grad - fd).norm() / scale)
}

/// Projected gradient ascent with Barzilai-Borwein steps and backtracking,
/// so the trace is non-decreasing.
pub fn ascend(pairs: &PairSet, init: DMatrix<f64>, iterations: usize, tolerance: f64) -> Result<AscentRun> {
    let mut theta = init;
    project_spectral(&mut theta);
    let (mut ll, mut grad) = pair_log_likelihood_grad(&theta, pairs)?;
    let mut trace = vec![ll];
    let mut step = 1.0;
    let mut converged = false;
    for _ in 0..iterations {
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..40 {
            let mut cand = &theta + &grad * alpha;
            project_spectral(&mut cand);
            let (cand_ll, cand_grad) = pair_log_likelihood_grad(&cand, pairs)?;
            let moved = (&cand - &theta).dot(&grad);
            if cand_ll >= ll + 1e-4 * moved {
                accepted = Some((cand, cand_ll, cand_grad));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, cand_ll, cand_grad)) = accepted else {
            converged = true;
            break;
        };
        let ds = &cand - &theta;
        let dg = &cand_grad - &grad;
        let gain = cand_ll - ll;
        let step_norm = ds.norm();
        theta = cand;
        ll = cand_ll;
        grad = cand_grad;
        trace.push(ll);
        if step_norm <= tolerance * (1.0 + theta.norm()) || gain.abs() <= 1e-15 {
            converged = true;
            break;
        }
        let curvature = -ds.dot(&dg);
        step = if curvature > 0.0 {
            (ds.norm_squared() / curvature).clamp(1e-6, 1e8)
        } else {
            (alpha * 2.0).min(1e8)
        };
    }
    Ok(AscentRun { theta, trace, converged })
}

/// Moment estimate of θ: `θᵀθ ≈ 2d²·sym((1/m) Σ t x x'ᵀ)`, then the top-r factor.
pub fn spectral_init(pairs: &PairSet, r: usize) -> DMatrix<f64> {
    let d = pairs.dim();
    let weighted = DMatrix::from_fn(pairs.len(), d, |i, j| pairs.t[i] * pairs.x[(i, j)]);
    let a = weighted.tr_mul(&pairs.x_prime) / pairs.len().max(1) as f64;
    let sym = (&a + a.transpose()) * (d as f64 * d as f64);
    let (values, vectors) = sym_eigen_desc(&sym);
    let mut theta = DMatrix::zeros(r, d);
    for k in 0..r.min(d) {
        let scale = values[k].max(0.0).sqrt();
        for j in 0..d {
            theta[(k, j)] = scale * vectors[(j, k)];
        }
    }
    project_spectral(&mut theta);
    theta
}

/// Approximate MLE over `‖θ‖₂ ≤ 1`.
pub fn mle_contrastive(pairs: &PairSet, r: usize, config: &AscentConfig, rng: &mut RngStream) -> Result<ContrastiveFit> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no pairs".into()));
    }
    let d = pairs.dim();
    if r == 0 || r > d {
        return Err(invalid("need 1 <= r <= d"));
    }
    let start = spectral_init(pairs, r);
    let mut gradient_check_error = 0.0;
    if config.gradient_check_pairs > 0 {
        let take: Vec<usize> = (0..pairs.len().min(config.gradient_check_pairs)).collect();
        // a generic point: the spectral start can be exactly zero
        let mut probe = start.clone();
        for v in probe.iter_mut() {
            *v += 0.05 * rng.standard_normal();
        }
        project_spectral(&mut probe);
        gradient_check_error = gradient_check(&probe, &pairs.select(&take))?;
        if gradient_check_error > GRADIENT_CHECK_TOLERANCE {
            return Err(Error::GradientCheck {
                relative_error: gradient_check_error,
                tolerance: GRADIENT_CHECK_TOLERANCE,
            });
        }
    }
    let mut best: Option<AscentRun> = None;
    for restart in 0..config.restarts.max(1) {
        let init = if restart == 0 {
            start.clone()
        } else {
            let mut t = DMatrix::from_fn(r, d, |_, _| rng.standard_normal());
            let norm = spectral_norm(&t);
            if norm > 0.0 {
                t *= 0.5 / norm;
            }
            t
        };
        let run = ascend(pairs, init, config.iterations, config.tolerance)?;
        let better = match &best {
            None => true,
            Some(b) => run.trace.last() > b.trace.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        log::debug!("contrastive ascent stopped at the iteration budget");
    }
    Ok(ContrastiveFit {
        log_likelihood: *best.trace.last().unwrap(),
        theta: best.theta,
        converged: best.converged,
        gradient_check_error,
    })
}

/// `βᵀθx`.
pub fn predictor_contrastive(theta: &DMatrix<f64>, beta: &DVector<f64>, x: &[f64]) -> Result<f64> {
    check_dim(theta.nrows(), beta.len())?;
    check_dim(theta.ncols(), x.len())?;
    let w = theta.tr_mul(beta);
    Ok(w.iter().zip(x).map(|(a, b)| a * b).sum())
}

#[derive(Clone, Debug)]
pub struct ContrastiveBetaFit {
    pub beta: DVector<f64>,
    pub flagged: bool,
}

/// Truncated-squared-loss ERM on features `θ̂x` over `‖β‖₂ ≤ D`.
pub fn erm_beta_contrastive(
    theta_hat: &DMatrix<f64>,
    labeled: &LabeledData,
    level: f64,
    norm_bound: f64,
    config: &PgdConfig,
) -> Result<ContrastiveBetaFit> {
    if !(level > 0.0) || !(norm_bound > 0.0) {
        return Err(invalid("truncation level and norm bound must be positive"));
    }
    check_dim(theta_hat.ncols(), labeled.dim())?;
    let u = &labeled.x * theta_hat.transpose();
    let fit = truncated_erm(&u, &labeled.y, level, norm_bound, config);
    let flagged = !fit.converged || !fit.certified();
    Ok(ContrastiveBetaFit { beta: fit.beta, flagged })
}

/// Downstream phase with the default level `L = 36(D² + 1) ln n`.
pub fn fit_contrastive_downstream(
    theta_hat: &DMatrix<f64>,
    labeled: &LabeledData,
    norm_bound: f64,
    config: &PgdConfig,
) -> Result<ContrastiveBetaFit> {
    let level = contrastive_truncation_level(norm_bound, labeled.len().max(2) as f64);
    erm_beta_contrastive(theta_hat, labeled, level, norm_bound, config)
}

/// Excess squared-loss risk of `wᵀx` against `β*ᵀθ*x`: `‖w − θ*ᵀβ*‖²/d`,
/// exact because `E[xxᵀ] = I/d` on the unit sphere.
pub fn excess_risk_contrastive_linear(theta_star: &DMatrix<f64>, beta_star: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    check_dim(theta_star.ncols(), w.len())?;
    check_dim(theta_star.nrows(), beta_star.len())?;
    let diff = w - theta_star.tr_mul(beta_star);
    Ok(diff.norm_squared() / theta_star.ncols() as f64)
}

pub fn excess_risk_contrastive(
    theta_star: &DMatrix<f64>,
    beta_star: &DVector<f64>,
    theta_hat: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
) -> Result<f64> {
    check_dim(theta_hat.nrows(), beta_hat.len())?;
    excess_risk_contrastive_linear(theta_star, beta_star, &theta_hat.tr_mul(beta_hat))
}

/// Least squares of `y` on raw `x` (minimum norm when underdetermined).
pub fn supervised_baseline_contrastive(labeled: &LabeledData) -> Result<DVector<f64>> {
    if labeled.is_empty() {
        return Err(Error::InsufficientData("no labeled samples".into()));
    }
    if labeled.len() >= labeled.dim() {
        Ok(ols(&labeled.x, &labeled.y).beta)
    } else {
        Ok(crate::linalg::lstsq_min_norm(&labeled.x, &labeled.y).0)
    }
}

#[derive(Clone, Debug)]
pub struct Alignment {
    pub rotation: DMatrix<f64>,
    pub rank_deficient: bool,
}

/// `O = V₁U₁ᵀ` from the SVD of a Monte-Carlo estimate of `E[f_θ̂(x) f_θ*(x)ᵀ]`.
pub fn align_orthogonal_contrastive(
    theta_hat: &DMatrix<f64>,
    theta_star: &DMatrix<f64>,
    mc_count: usize,
    rng: &mut RngStream,
) -> Result<Alignment> {
    check_dim(theta_star.nrows(), theta_hat.nrows())?;
    check_dim(theta_star.ncols(), theta_hat.ncols())?;
    if mc_count == 0 {
        return Err(invalid("mc_count must be positive"));
    }
    let x = sample_sphere(mc_count, theta_star.ncols(), rng);
    let fh = &x * theta_hat.transpose();
    let fs = &x * theta_star.transpose();
    let cross = fh.tr_mul(&fs) / mc_count as f64;
    let s = singular_values(&cross);
    let rank_deficient = s[s.len() - 1] <= 1e-12 * s[0].max(f64::MIN_POSITIVE);
    Ok(Alignment {
        rotation: orthogonal_polar(&cross).transpose(),
        rank_deficient,
    })
}

/// Hellinger distance between pair laws under θ and θ*; the `(x, x')`
/// marginal is shared, and the sum over `t` is done exactly per draw.
pub fn hellinger_pairs(
    theta: &DMatrix<f64>,
    theta_star: &DMatrix<f64>,
    mc_count: usize,
    rng: &mut RngStream,
) -> Result<DivergenceEstimate> {
    check_dim(theta_star.ncols(), theta.ncols())?;
    if mc_count == 0 {
        return Err(invalid("mc_count must be positive"));
    }
    let d = theta_star.ncols();
    let x = sample_sphere(mc_count, d, rng);
    let xp = sample_sphere(mc_count, d, rng);
    let (_, _, s) = similarities(theta, &x, &xp);
    let (_, _, s_star) = similarities(theta_star, &x, &xp);
    let mut acc = MeanAccumulator::default();
    for i in 0..mc_count {
        let p = sigmoid(s[i]);
        let q = sigmoid(s_star[i]);
        let affinity = (p * q).sqrt() + ((1.0 - p) * (1.0 - q)).sqrt();
        acc.push(affinity);
    }
    let sq = hellinger_squared_from_affinity(acc.mean(), acc.std_error(), mc_count);
    Ok(hellinger_from_squared(sq))
}

#[derive(Clone, Debug)]
pub struct WeakInformativeReport {
    pub lhs: DivergenceEstimate,
    pub hellinger: DivergenceEstimate,
    pub rhs: f64,
    pub kappa_used: f64,
    pub holds: bool,
}

impl WeakInformativeReport {
    pub fn empirical_ratio(&self) -> f64 {
        if self.hellinger.value > 0.0 {
            self.lhs.value / self.hellinger.value
        } else if self.lhs.value > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// `κ = c₃/√σ_min(E[f_θ* f_θ*ᵀ])` with `E[ffᵀ] = θ*θ*ᵀ/d`.
pub fn kappa_contrastive(theta_star: &DMatrix<f64>, c3: f64) -> Result<f64> {
    let d = theta_star.ncols() as f64;
    let second = theta_star * theta_star.transpose() / d;
    let (values, _) = sym_eigen_desc(&second);
    let smin = values[values.len() - 1];
    if smin <= 1e-14 {
        return Err(Error::Precondition("E[f fᵀ] is singular".into()));
    }
    Ok(c3 / smin.sqrt())
}

/// Checks `TV(P_{θ, Oᵀβ*}(x, y), P_{θ*, β*}(x, y)) ≤ κ·H(pair laws)`.
pub fn verify_weakly_informative_contrastive(
    theta: &DMatrix<f64>,
    theta_star: &DMatrix<f64>,
    beta_star: &DVector<f64>,
    c3: f64,
    mc_count: usize,
    rng: &mut RngStream,
) -> Result<WeakInformativeReport> {
    let kappa_used = kappa_contrastive(theta_star, c3)?;
    check_dim(theta_star.nrows(), beta_star.len())?;
    let alignment = align_orthogonal_contrastive(theta, theta_star, mc_count, &mut rng.split_named("align", 0))?;
    let hellinger = hellinger_pairs(theta, theta_star, mc_count, &mut rng.split_named("hellinger", 0))?;

    // y | x is Gaussian with variance ‖β*‖² + 1 under both laws; only the mean moves.
    let sigma = (beta_star.norm_squared() + 1.0).sqrt();
    let direction = (alignment.rotation.clone() * theta - theta_star).tr_mul(beta_star);
    let x = sample_sphere(mc_count, theta_star.ncols(), &mut rng.split_named("tv", 0));
    let delta = &x * direction;
    let mut acc = MeanAccumulator::default();
    for v in delta.iter() {
        acc.push(2.0 * standard_normal_cdf(v.abs() / (2.0 * sigma)) - 1.0);
    }
    let lhs = DivergenceEstimate {
        value: acc.mean().clamp(0.0, 1.0),
        std_error: acc.std_error(),
        sample_count: mc_count,
    };
    let rhs = kappa_used * hellinger.value;
    let combined = (lhs.std_error.powi(2) + (kappa_used * hellinger.std_error).powi(2)).sqrt();
    Ok(WeakInformativeReport {
        lhs,
        hellinger,
        rhs,
        kappa_used,
        holds: lhs.value <= rhs + 4.0 * combined + 1e-12,
    })
}
