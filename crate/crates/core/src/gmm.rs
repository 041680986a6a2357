//! Equal-weight isotropic Gaussian mixture `x | z=i ∼ N(uᵢ, I_d)` with a
//! noisy binary labeler `P(y = bᵢ | z = i) = 1 − ε`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::data::LabeledData;
use crate::error::{check_dim, invalid, Error, Result};
use crate::losses::{excess_risk_mc, LabeledSampler, LossSpec, RiskEstimate};
use crate::prob::{estimate_tv, gaussian_tv_closed, DensityEvaluator, DivergenceEstimate, Sampler};
use crate::rng::RngStream;

/// Largest K for which `erm_psi` enumerates every labeler.
pub const EXHAUSTIVE_ERM_MAX_K: usize = 12;
/// Largest K for which `match_permutation` enumerates every permutation.
pub const EXHAUSTIVE_MATCH_MAX_K: usize = 8;

const EM_TOLERANCE: f64 = 1e-8;
const EM_MAX_ITERATIONS: usize = 500;
const EMPTY_MASS: f64 = 1e-12;

/// `√(d ln K)`, taken as 0 for K = 1.
fn scale(d: usize, k: usize) -> f64 {
    if k <= 1 {
        0.0
    } else {
        (d as f64 * (k as f64).ln()).sqrt()
    }
}

/// Mixture centers stored as rows of a K×d matrix.
#[derive(Clone, Debug)]
pub struct GmmModel {
    centers: DMatrix<f64>,
    norm_scale: f64,
}

impl GmmModel {
    /// Enforces `‖uᵢ‖ ≤ D√(d ln K)`; the bound is not applied when K = 1.
    pub fn new(centers: DMatrix<f64>, norm_scale: f64) -> Result<Self> {
        let (k, d) = centers.shape();
        if k == 0 || d == 0 {
            return Err(invalid("need at least one center of positive dimension"));
        }
        if !(norm_scale > 0.0) {
            return Err(invalid("norm scale must be positive"));
        }
        if k > 1 {
            let bound = norm_scale * scale(d, k);
            for i in 0..k {
                let norm = centers.row(i).norm();
                if norm > bound * (1.0 + 1e-12) {
                    return Err(invalid(format!("center {i} has norm {norm} above {bound}")));
                }
            }
        }
        Ok(Self { centers, norm_scale })
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn norm_scale(&self) -> f64 {
        self.norm_scale
    }

    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn d(&self) -> usize {
        self.centers.ncols()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelerPsi {
    pub bits: Vec<u8>,
    eps: Eps,
}

// f64 wrapper so LabelerPsi can be Eq; eps is validated finite.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Eps(f64);
impl Eq for Eps {}

impl LabelerPsi {
    pub fn new(bits: Vec<u8>, eps: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&eps) {
            return Err(invalid("eps must lie in [0, 1/2)"));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(invalid("bits must be 0 or 1"));
        }
        Ok(Self { bits, eps: Eps(eps) })
    }

    pub fn eps(&self) -> f64 {
        self.eps.0
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }

    /// `P(y = 1 | z = i)`.
    pub fn prob_one(&self, i: usize) -> f64 {
        if self.bits[i] == 1 {
            1.0 - self.eps.0
        } else {
            self.eps.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmPosterior {
    pub weights: Vec<f64>,
}

fn sq_dist(a: &[f64], centers: &DMatrix<f64>, i: usize) -> f64 {
    a.iter().enumerate().map(|(j, v)| (v - centers[(i, j)]).powi(2)).sum()
}

/// Writes normalized posterior weights into `out` and returns the mixture
/// log-density at `x`.
fn posterior_into(centers: &DMatrix<f64>, x: &[f64], out: &mut [f64]) -> f64 {
    let k = centers.nrows();
    let mut max = f64::NEG_INFINITY;
    for i in 0..k {
        out[i] = -0.5 * sq_dist(x, centers, i);
        max = max.max(out[i]);
    }
    let mut total = 0.0;
    for w in out.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in out.iter_mut() {
        *w /= total;
    }
    let d = x.len() as f64;
    max + total.ln() - (k as f64).ln() - 0.5 * d * (2.0 * PI).ln()
}

/// Posterior `P(z = i | x)` under equal weights and identity covariances.
pub fn posterior_gmm(centers: &DMatrix<f64>, x: &[f64]) -> Result<GmmPosterior> {
    check_dim(centers.ncols(), x.len())?;
    let mut weights = vec![0.0; centers.nrows()];
    posterior_into(centers, x, &mut weights);
    Ok(GmmPosterior { weights })
}

/// `Σᵢ wᵢ sᵢ` with `sᵢ = ±1` from the bits; sign decides the Bayes label.
fn vote_margin(weights: &[f64], bits: &[u8]) -> f64 {
    weights
        .iter()
        .zip(bits)
        .map(|(w, &b)| if b == 1 { *w } else { -*w })
        .sum()
}

/// Bayes classifier: predicts 1 iff `Σᵢ wᵢ(x) P_ψ(y=1|z=i) ≥ 1/2`.
pub fn bayes_predict_gmm(centers: &DMatrix<f64>, psi: &LabelerPsi, x: &[f64]) -> Result<u8> {
    check_dim(centers.nrows(), psi.k())?;
    let post = posterior_gmm(centers, x)?;
    Ok(predict_from_weights(&post.weights, psi))
}

fn predict_from_weights(weights: &[f64], psi: &LabelerPsi) -> u8 {
    // v − 1/2 = (1/2 − ε)·Σ wᵢsᵢ, so the sign test avoids rounding at the tie.
    if vote_margin(weights, &psi.bits) >= 0.0 {
        1
    } else {
        0
    }
}

pub fn check_separation(model: &GmmModel) -> bool {
    separation_holds(&model.centers)
}

/// `min_{i≠j} ‖uᵢ − uⱼ‖ ≥ 100√(d ln K)`.
pub fn separation_holds(centers: &DMatrix<f64>) -> bool {
    let (k, d) = centers.shape();
    let threshold = 100.0 * scale(d, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let dist = (centers.row(i) - centers.row(j)).norm();
            if dist < threshold * (1.0 - 1e-12) {
                return false;
            }
        }
    }
    true
}

fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

pub fn sample_gmm_unlabeled(model: &GmmModel, m: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let (k, d) = model.centers.shape();
    let mut out = DMatrix::zeros(m, d);
    for row in 0..m {
        let z = rng.index(k);
        for j in 0..d {
            out[(row, j)] = model.centers[(z, j)] + rng.standard_normal();
        }
    }
    out
}

pub fn sample_gmm_labeled_data(
    model: &GmmModel,
    psi: &LabelerPsi,
    n: usize,
    rng: &mut RngStream,
) -> Result<LabeledData> {
    check_dim(model.k(), psi.k())?;
    let d = model.d();
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut buf = vec![0.0; d];
    let sampler = GmmLabeledSampler { model, psi };
    for row in 0..n {
        y[row] = sampler.sample_pair(rng, &mut buf);
        for j in 0..d {
            x[(row, j)] = buf[j];
        }
    }
    LabeledData::new(x, y)
}

/// Rows `(x, y)` as an `n×(d+1)` matrix.
pub fn sample_gmm_labeled(model: &GmmModel, psi: &LabelerPsi, n: usize, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    Ok(sample_gmm_labeled_data(model, psi, n, rng)?.to_matrix())
}

/// Ground-truth sampler of `(x, y)`.
pub struct GmmLabeledSampler<'a> {
    pub model: &'a GmmModel,
    pub psi: &'a LabelerPsi,
}

impl LabeledSampler for GmmLabeledSampler<'_> {
    fn input_dim(&self) -> usize {
        self.model.d()
    }

    fn sample_pair(&self, rng: &mut RngStream, x_out: &mut [f64]) -> f64 {
        let z = rng.index(self.model.k());
        for (j, v) in x_out.iter_mut().enumerate() {
            *v = self.model.centers[(z, j)] + rng.standard_normal();
        }
        let flip = rng.bernoulli(self.psi.eps());
        let label = self.psi.bits[z] ^ flip as u8;
        label as f64
    }
}

/// Mixture marginal of `x`; both a density and a sampler.
#[derive(Clone, Debug)]
pub struct GmmMarginal {
    centers: DMatrix<f64>,
}

impl GmmMarginal {
    pub fn new(centers: DMatrix<f64>) -> Self {
        Self { centers }
    }
}

impl DensityEvaluator for GmmMarginal {
    fn dim(&self) -> usize {
        self.centers.ncols()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.centers.nrows()];
        posterior_into(&self.centers, x, &mut buf)
    }
}

impl Sampler for GmmMarginal {
    fn dim(&self) -> usize {
        self.centers.ncols()
    }

    fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let z = rng.index(self.centers.nrows());
        for (j, v) in out.iter_mut().enumerate() {
            *v = self.centers[(z, j)] + rng.standard_normal();
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmRun {
    pub centers: DMatrix<f64>,
    /// Average log-likelihood after each E-step.
    pub trace: Vec<f64>,
    /// Iterations at which a center was reseeded; the likelihood may drop there.
    pub reseeds: Vec<usize>,
    pub converged: bool,
}

impl EmRun {
    pub fn log_likelihood(&self) -> f64 {
        *self.trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub centers: DMatrix<f64>,
    pub log_likelihood: f64,
    pub runs: Vec<EmRun>,
}

fn kmeans_pp(points: &[f64], m: usize, d: usize, k: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let mut centers = DMatrix::zeros(k, d);
    let first = rng.index(m);
    for j in 0..d {
        centers[(0, j)] = points[first * d + j];
    }
    let mut nearest = vec![f64::INFINITY; m];
    for c in 1..k {
        let mut total = 0.0;
        for (p, best) in nearest.iter_mut().enumerate() {
            let dist = sq_dist(&points[p * d..(p + 1) * d], &centers, c - 1);
            *best = best.min(dist);
            total += *best;
        }
        let chosen = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = m - 1;
            for (p, w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = p;
                    break;
                }
            }
            pick
        } else {
            rng.index(m)
        };
        for j in 0..d {
            centers[(c, j)] = points[chosen * d + j];
        }
    }
    centers
}

/// One EM run from the given initial centers.
pub fn em_from(unlabeled: &DMatrix<f64>, init: DMatrix<f64>) -> Result<EmRun> {
    let (m, d) = unlabeled.shape();
    let k = init.nrows();
    check_dim(d, init.ncols())?;
    if m < k || k == 0 {
        return Err(Error::InsufficientData(format!("need m >= K >= 1, got m={m}, K={k}")));
    }
    let points = row_major(unlabeled);
    let mut centers = init;
    let mut trace = Vec::new();
    let mut reseeds = Vec::new();
    let mut converged = false;
    let mut weights = vec![0.0; k];
    let mut log_dens = vec![0.0; m];

    for iter in 0..EM_MAX_ITERATIONS {
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut mass = vec![0.0; k];
        let mut ll = 0.0;
        for p in 0..m {
            let x = &points[p * d..(p + 1) * d];
            log_dens[p] = posterior_into(&centers, x, &mut weights);
            ll += log_dens[p];
            for i in 0..k {
                let w = weights[i];
                mass[i] += w;
                for j in 0..d {
                    sums[(i, j)] += w * x[j];
                }
            }
        }
        ll /= m as f64;
        if let Some(prev) = trace.last() {
            if ll - prev < EM_TOLERANCE && !reseeds.contains(&(iter - 1)) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);

        let mut reseeded = false;
        for i in 0..k {
            if mass[i] < EMPTY_MASS {
                let worst = (0..m)
                    .min_by(|&a, &b| log_dens[a].total_cmp(&log_dens[b]))
                    .unwrap_or(0);
                for j in 0..d {
                    centers[(i, j)] = points[worst * d + j];
                }
                // avoid reseeding two centers onto the same point
                log_dens[worst] = f64::INFINITY;
                reseeded = true;
            } else {
                for j in 0..d {
                    centers[(i, j)] = sums[(i, j)] / mass[i];
                }
            }
        }
        if reseeded {
            reseeds.push(iter);
        }
    }
    Ok(EmRun {
        centers,
        trace,
        reseeds,
        converged,
    })
}

/// Approximate MLE of the centers: EM from `restarts` k-means++ starts,
/// keeping the run with the highest log-likelihood.
pub fn mle_gmm(unlabeled: &DMatrix<f64>, k: usize, restarts: usize, rng: &mut RngStream) -> Result<GmmFit> {
    let (m, d) = unlabeled.shape();
    if k == 0 {
        return Err(invalid("K must be positive"));
    }
    if m < k {
        return Err(Error::InsufficientData(format!("need m >= K, got m={m}, K={k}")));
    }
    let points = row_major(unlabeled);
    let mut runs = Vec::with_capacity(restarts.max(1));
    for _ in 0..restarts.max(1) {
        let init = kmeans_pp(&points, m, d, k, rng);
        runs.push(em_from(unlabeled, init)?);
    }
    let best = runs
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.log_likelihood() > runs[best].log_likelihood() { i } else { best });
    if !runs[best].converged {
        log::debug!("best EM run stopped at the iteration cap");
    }
    Ok(GmmFit {
        centers: runs[best].centers.clone(),
        log_likelihood: runs[best].log_likelihood(),
        runs,
    })
}

#[derive(Clone, Debug)]
pub struct PsiFit {
    pub psi: LabelerPsi,
    pub empirical_loss: f64,
    /// Majority vote was used because K exceeds the exhaustive limit.
    pub heuristic: bool,
}

fn posterior_table(centers: &DMatrix<f64>, labeled: &LabeledData) -> Result<Vec<f64>> {
    check_dim(centers.ncols(), labeled.dim())?;
    let k = centers.nrows();
    let d = labeled.dim();
    let points = row_major(&labeled.x);
    let mut table = vec![0.0; labeled.len() * k];
    for p in 0..labeled.len() {
        posterior_into(centers, &points[p * d..(p + 1) * d], &mut table[p * k..(p + 1) * k]);
    }
    Ok(table)
}

/// Empirical 0-1 loss of the Bayes classifier induced by `bits`.
pub fn empirical_zero_one(centers: &DMatrix<f64>, bits: &[u8], labeled: &LabeledData) -> Result<f64> {
    let k = centers.nrows();
    check_dim(k, bits.len())?;
    let table = posterior_table(centers, labeled)?;
    Ok(loss_from_table(&table, k, bits, labeled))
}

fn loss_from_table(table: &[f64], k: usize, bits: &[u8], labeled: &LabeledData) -> f64 {
    let n = labeled.len();
    if n == 0 {
        return 0.0;
    }
    let errors = (0..n)
        .filter(|&p| {
            let pred = if vote_margin(&table[p * k..(p + 1) * k], bits) >= 0.0 { 1.0 } else { 0.0 };
            pred != labeled.y[p]
        })
        .count();
    errors as f64 / n as f64
}

fn bits_of(code: usize, k: usize) -> Vec<u8> {
    // bit 0 of the pattern is the most significant so that numeric order is lexicographic order
    (0..k).map(|i| ((code >> (k - 1 - i)) & 1) as u8).collect()
}

/// Downstream ERM over the 2^K labelers on fitted centers.
pub fn erm_psi(centers: &DMatrix<f64>, labeled: &LabeledData, eps: f64) -> Result<PsiFit> {
    let k = centers.nrows();
    if k > EXHAUSTIVE_ERM_MAX_K {
        return erm_psi_majority(centers, labeled, eps);
    }
    let table = posterior_table(centers, labeled)?;
    let mut best_code = 0;
    let mut best_loss = f64::INFINITY;
    for code in 0..(1usize << k) {
        let loss = loss_from_table(&table, k, &bits_of(code, k), labeled);
        if loss < best_loss {
            best_loss = loss;
            best_code = code;
        }
    }
    Ok(PsiFit {
        psi: LabelerPsi::new(bits_of(best_code, k), eps)?,
        empirical_loss: best_loss,
        heuristic: false,
    })
}

/// Majority label among points whose MAP cluster is each center; ties and
/// empty clusters get 0.
pub fn erm_psi_majority(centers: &DMatrix<f64>, labeled: &LabeledData, eps: f64) -> Result<PsiFit> {
    let k = centers.nrows();
    let table = posterior_table(centers, labeled)?;
    let mut ones = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for p in 0..labeled.len() {
        let row = &table[p * k..(p + 1) * k];
        let map = (0..k).fold(0, |best, i| if row[i] > row[best] { i } else { best });
        counts[map] += 1;
        if labeled.y[p] == 1.0 {
            ones[map] += 1;
        }
    }
    let bits: Vec<u8> = (0..k).map(|i| (2 * ones[i] > counts[i]) as u8).collect();
    let empirical_loss = loss_from_table(&table, k, &bits, labeled);
    Ok(PsiFit {
        psi: LabelerPsi::new(bits, eps)?,
        empirical_loss,
        heuristic: true,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    /// `perm[i]` is the fitted center matched to true center `i`.
    pub perm: Vec<usize>,
    pub exhaustive: bool,
}

fn matching_cost(centers: &DMatrix<f64>, truth: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(i, &p)| (centers.row(p) - truth.row(i)).norm_squared())
        .sum()
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Permutation minimizing `Σᵢ ‖u_{π(i)} − u*ᵢ‖²`.
pub fn match_permutation(centers: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Matching> {
    check_dim(truth.nrows(), centers.nrows())?;
    check_dim(truth.ncols(), centers.ncols())?;
    let k = truth.nrows();
    if k <= EXHAUSTIVE_MATCH_MAX_K {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = perm.clone();
        let mut best_cost = matching_cost(centers, truth, &perm);
        while next_permutation(&mut perm) {
            let cost = matching_cost(centers, truth, &perm);
            if cost < best_cost {
                best_cost = cost;
                best.copy_from_slice(&perm);
            }
        }
        return Ok(Matching {
            perm: best,
            exhaustive: true,
        });
    }
    let mut used = vec![false; k];
    let mut perm = Vec::with_capacity(k);
    for i in 0..k {
        let pick = (0..k)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| {
                let da = (centers.row(a) - truth.row(i)).norm_squared();
                let db = (centers.row(b) - truth.row(i)).norm_squared();
                da.total_cmp(&db)
            })
            .expect("an unmatched center remains");
        used[pick] = true;
        perm.push(pick);
    }
    Ok(Matching {
        perm,
        exhaustive: false,
    })
}

/// Rows of `centers` reordered so row `i` is the center matched to truth `i`.
pub fn permute_rows(centers: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(perm.len(), centers.ncols(), |i, j| centers[(perm[i], j)])
}

#[derive(Clone, Debug)]
pub struct GmmInformativeReport {
    pub lhs: f64,
    pub marginal_tv: DivergenceEstimate,
    pub rhs: f64,
    pub constant: f64,
    pub holds: bool,
    pub matching: Matching,
}

impl GmmInformativeReport {
    pub fn empirical_ratio(&self) -> f64 {
        if self.marginal_tv.value > 0.0 {
            self.lhs / self.marginal_tv.value
        } else if self.lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Joint TV after matching, `(1/K) Σᵢ TV(N(u_{π(i)}, I), N(u*ᵢ, I))`.
pub fn matched_joint_tv(centers: &DMatrix<f64>, truth: &DMatrix<f64>, matching: &Matching) -> Result<f64> {
    let k = truth.nrows();
    let mut total = 0.0;
    for (i, &p) in matching.perm.iter().enumerate() {
        let a: Vec<f64> = centers.row(p).iter().copied().collect();
        let b: Vec<f64> = truth.row(i).iter().copied().collect();
        total += gaussian_tv_closed(&a, &b)?;
    }
    Ok(total / k as f64)
}

/// Checks `TV(joint) ≤ 500·TV(marginal)` after matching. Fails with a
/// precondition error if the truth is not separated or the marginals are
/// farther apart than `1/(4K)`.
pub fn verify_informative_gmm(
    centers: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    mc_count: usize,
    rng: &mut RngStream,
) -> Result<GmmInformativeReport> {
    const CONSTANT: f64 = 500.0;
    if !separation_holds(truth) {
        return Err(Error::Precondition("true centers violate the separation condition".into()));
    }
    let matching = match_permutation(centers, truth)?;
    let lhs = matched_joint_tv(centers, truth, &matching)?;
    let p = GmmMarginal::new(truth.clone());
    let q = GmmMarginal::new(centers.clone());
    let marginal_tv = estimate_tv(&p, &q, &p, mc_count, rng)?;
    let k = truth.nrows() as f64;
    if marginal_tv.value > 1.0 / (4.0 * k) {
        return Err(Error::Precondition(format!(
            "marginal TV {:.4} exceeds 1/(4K) = {:.4}",
            marginal_tv.value,
            1.0 / (4.0 * k)
        )));
    }
    let rhs = CONSTANT * marginal_tv.value;
    Ok(GmmInformativeReport {
        lhs,
        marginal_tv,
        rhs,
        constant: CONSTANT,
        holds: lhs <= rhs + 4.0 * CONSTANT * marginal_tv.std_error + 1e-12,
        matching,
    })
}

/// Paired Monte-Carlo 0-1 excess risk of the classifier `(centers, psi)`.
pub fn excess_risk_gmm(
    model: &GmmModel,
    psi_star: &LabelerPsi,
    centers: &DMatrix<f64>,
    psi: &LabelerPsi,
    test_count: usize,
    rng: &mut RngStream,
) -> Result<RiskEstimate> {
    check_dim(model.d(), centers.ncols())?;
    let k_hat = centers.nrows();
    let k = model.k();
    let fitted = |x: &[f64]| {
        let mut w = vec![0.0; k_hat];
        posterior_into(centers, x, &mut w);
        predict_from_weights(&w, psi) as f64
    };
    let bayes = |x: &[f64]| {
        let mut w = vec![0.0; k];
        posterior_into(model.centers(), x, &mut w);
        predict_from_weights(&w, psi_star) as f64
    };
    let sampler = GmmLabeledSampler { model, psi: psi_star };
    excess_risk_mc(&fitted, &bayes, LossSpec::ZeroOne, &sampler, test_count, rng)
}

#[derive(Clone, Debug)]
pub struct GmmPipelineResult {
    pub psi_hat: LabelerPsi,
    pub centers_hat: DMatrix<f64>,
    pub excess_risk: RiskEstimate,
    pub heuristic_erm: bool,
}

/// Fits centers on `unlabeled`, a labeler on `labeled`, and scores the result.
pub fn fit_and_score_gmm(
    model: &GmmModel,
    psi_star: &LabelerPsi,
    unlabeled: &DMatrix<f64>,
    labeled: &LabeledData,
    restarts: usize,
    test_count: usize,
    rng: &mut RngStream,
) -> Result<GmmPipelineResult> {
    let mut em_rng = rng.split_named("em", 0);
    let fit = mle_gmm(unlabeled, model.k(), restarts, &mut em_rng)?;
    let psi = erm_psi(&fit.centers, labeled, psi_star.eps())?;
    let mut test_rng = rng.split_named("test", 0);
    let excess_risk = excess_risk_gmm(model, psi_star, &fit.centers, &psi.psi, test_count, &mut test_rng)?;
    Ok(GmmPipelineResult {
        psi_hat: psi.psi,
        centers_hat: fit.centers,
        excess_risk,
        heuristic_erm: psi.heuristic,
    })
}

/// Two-phase MLE+ERM: `m` unlabeled and `n` labeled draws, scored on
/// `test_count` fresh draws.
pub fn pipeline_gmm(
    model: &GmmModel,
    psi_star: &LabelerPsi,
    m: usize,
    n: usize,
    restarts: usize,
    test_count: usize,
    rng: &mut RngStream,
) -> Result<GmmPipelineResult> {
    if m == 0 {
        return Err(Error::InsufficientData("the MLE phase needs unlabeled data".into()));
    }
    let unlabeled = sample_gmm_unlabeled(model, m, &mut rng.split_named("unlabeled", 0));
    let labeled = sample_gmm_labeled_data(model, psi_star, n, &mut rng.split_named("labeled", 0))?;
    fit_and_score_gmm(model, psi_star, &unlabeled, &labeled, restarts, test_count, rng)
}

/// Supervised-only comparison: the same pipeline with the labeled inputs as
/// the only unlabeled data.
pub fn supervised_baseline_gmm(
    model: &GmmModel,
    psi_star: &LabelerPsi,
    labeled: &LabeledData,
    restarts: usize,
    test_count: usize,
    rng: &mut RngStream,
) -> Result<GmmPipelineResult> {
    fit_and_score_gmm(model, psi_star, &labeled.x, labeled, restarts, test_count, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_centers() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[10.0, -10.0])
    }

    #[test]
    fn bayes_examples() {
        let psi = LabelerPsi::new(vec![1, 0], 0.1).unwrap();
        let c = two_centers();
        assert_eq!(bayes_predict_gmm(&c, &psi, &[10.0]).unwrap(), 1);
        assert_eq!(bayes_predict_gmm(&c, &psi, &[-10.0]).unwrap(), 0);
        assert_eq!(bayes_predict_gmm(&c, &psi, &[0.0]).unwrap(), 1);
        let one = DMatrix::from_row_slice(1, 1, &[3.0]);
        let psi1 = LabelerPsi::new(vec![1], 0.1).unwrap();
        assert_eq!(bayes_predict_gmm(&one, &psi1, &[-50.0]).unwrap(), 1);
    }

    #[test]
    fn separation_examples() {
        let edge = DMatrix::from_row_slice(2, 1, &[0.0, 100.0 * 2f64.ln().sqrt()]);
        assert!(separation_holds(&edge));
        let same = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(!separation_holds(&same));
        assert!(separation_holds(&DMatrix::from_row_slice(1, 2, &[0.0, 0.0])));
    }

    #[test]
    fn permutation_examples() {
        let c = two_centers();
        assert_eq!(match_permutation(&c, &c).unwrap().perm, vec![0, 1]);
        let swapped = permute_rows(&c, &[1, 0]);
        assert_eq!(match_permutation(&swapped, &c).unwrap().perm, vec![1, 0]);
    }

    #[test]
    fn k1_em_is_sample_mean() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.5, -2.0, 4.0]);
        let mut rng = RngStream::new(1, 0);
        let fit = mle_gmm(&x, 1, 2, &mut rng).unwrap();
        assert!((fit.centers[(0, 0)] - 0.625).abs() < 1e-14);
        assert!((fit.centers[(0, 1)] - 1.375).abs() < 1e-14);
    }

    #[test]
    fn lexicographic_bits() {
        assert_eq!(bits_of(0, 3), vec![0, 0, 0]);
        assert_eq!(bits_of(1, 3), vec![0, 0, 1]);
        assert_eq!(bits_of(4, 3), vec![1, 0, 0]);
    }
}
