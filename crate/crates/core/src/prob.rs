//! Elementary distributions, Monte-Carlo divergence estimators and log-log slope fits.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erf;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{max_asymmetry, sym_eigen_desc};
use crate::rng::RngStream;

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_FLOOR: f64 = -1e-10;

/// Log-density of a fixed distribution on ℝ^dim.
pub trait DensityEvaluator {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// Draws points of a fixed distribution on ℝ^dim into a caller buffer.
pub trait Sampler {
    fn dim(&self) -> usize;
    fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]);
}

/// Mean and symmetric PSD covariance of a multivariate normal.
///
/// Construction validates the covariance and caches a symmetric square-root
/// factor `U·diag(√λ)`, so rank-deficient covariances are sampled exactly.
#[derive(Clone, Debug)]
pub struct MvnParams {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl MvnParams {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: covariance.nrows(),
            });
        }
        let asym = max_asymmetry(&covariance);
        if asym > SYMMETRY_TOL {
            return Err(invalid(format!("covariance not symmetric (max |Σij-Σji| = {asym:e})")));
        }
        let (vals, vecs) = sym_eigen_desc(&covariance);
        if let Some(&low) = vals.iter().find(|&&v| v < EIGEN_FLOOR) {
            return Err(invalid(format!("covariance has negative eigenvalue {low:e}")));
        }
        let roots = vals.map(|v| v.max(0.0).sqrt());
        let factor = vecs * DMatrix::from_diagonal(&roots);
        Ok(Self {
            mean,
            covariance,
            factor,
        })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity is a valid covariance")
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Density evaluator; requires a positive-definite covariance.
    pub fn density(&self) -> Result<GaussianDensity> {
        GaussianDensity::new(self.mean.clone(), &self.covariance)
    }
}

impl Sampler for MvnParams {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let d = self.mean.len();
        let z: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let mut acc = self.mean[i];
            for (j, zj) in z.iter().enumerate() {
                acc += self.factor[(i, j)] * zj;
            }
            *o = acc;
        }
    }
}

/// `count` i.i.d. rows from `N(mean, covariance)`.
pub fn sample_mvn(params: &MvnParams, count: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let d = params.dim();
    let z = DMatrix::from_fn(count, d, |_, _| rng.standard_normal());
    let mut x = z * params.factor.transpose();
    for mut row in x.row_iter_mut() {
        row += params.mean.transpose();
    }
    x
}

/// Log-density of a non-degenerate multivariate normal.
#[derive(Clone, Debug)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        check_dim(d, covariance.nrows())?;
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| invalid("density needs a positive-definite covariance"))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            mean,
            precision,
            log_norm,
        })
    }
}

impl DensityEvaluator for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let diff: Vec<f64> = (0..d).map(|i| x[i] - self.mean[i]).collect();
        let mut quad = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.precision[(i, j)] * diff[j];
            }
            quad += diff[i] * row;
        }
        self.log_norm - 0.5 * quad
    }
}

/// Monte-Carlo estimate of a distance in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub sample_count: usize,
}

impl DivergenceEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            sample_count: 0,
        }
    }
}

/// Running mean with the standard error of the mean (Welford).
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanAccumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let var = self.m2 / (self.count - 1) as f64;
        (var.max(0.0) / self.count as f64).sqrt()
    }
}

fn density_ratios<P, Q, S>(
    p: &P,
    q: &Q,
    sampler_p: &S,
    count: usize,
    rng: &mut RngStream,
    mut visit: impl FnMut(f64),
) -> Result<()>
where
    P: DensityEvaluator + ?Sized,
    Q: DensityEvaluator + ?Sized,
    S: Sampler + ?Sized,
{
    if count == 0 {
        return Err(invalid("sample count must be positive"));
    }
    check_dim(p.dim(), q.dim())?;
    check_dim(p.dim(), sampler_p.dim())?;
    let mut x = vec![0.0; p.dim()];
    for _ in 0..count {
        sampler_p.sample_into(rng, &mut x);
        let ratio = (q.log_density(&x) - p.log_density(&x)).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFiniteRatio { point: x.clone() });
        }
        visit(ratio);
    }
    Ok(())
}

/// Total variation distance via `E_p[(1 − q/p)₊]` with draws from `p`.
pub fn estimate_tv<P, Q, S>(
    p: &P,
    q: &Q,
    sampler_p: &S,
    count: usize,
    rng: &mut RngStream,
) -> Result<DivergenceEstimate>
where
    P: DensityEvaluator + ?Sized,
    Q: DensityEvaluator + ?Sized,
    S: Sampler + ?Sized,
{
    let mut acc = MeanAccumulator::default();
    density_ratios(p, q, sampler_p, count, rng, |ratio| acc.push((1.0 - ratio).max(0.0)))?;
    Ok(DivergenceEstimate {
        value: acc.mean().clamp(0.0, 1.0),
        std_error: acc.std_error(),
        sample_count: count,
    })
}

/// Squared Hellinger distance `1 − E_p[√(q/p)]`, clamped at 0.
pub fn estimate_hellinger_squared<P, Q, S>(
    p: &P,
    q: &Q,
    sampler_p: &S,
    count: usize,
    rng: &mut RngStream,
) -> Result<DivergenceEstimate>
where
    P: DensityEvaluator + ?Sized,
    Q: DensityEvaluator + ?Sized,
    S: Sampler + ?Sized,
{
    let mut acc = MeanAccumulator::default();
    density_ratios(p, q, sampler_p, count, rng, |ratio| acc.push(ratio.sqrt()))?;
    Ok(hellinger_squared_from_affinity(acc.mean(), acc.std_error(), count))
}

pub(crate) fn hellinger_squared_from_affinity(
    affinity: f64,
    std_error: f64,
    count: usize,
) -> DivergenceEstimate {
    DivergenceEstimate {
        value: (1.0 - affinity).clamp(0.0, 1.0),
        std_error,
        sample_count: count,
    }
}

/// Maps an estimate of H² to one of H with a delta-method standard error.
pub fn hellinger_from_squared(sq: DivergenceEstimate) -> DivergenceEstimate {
    let h = sq.value.sqrt();
    let std_error = if h > 0.0 {
        sq.std_error / (2.0 * h)
    } else {
        sq.std_error.sqrt()
    };
    DivergenceEstimate {
        value: h,
        std_error,
        sample_count: sq.sample_count,
    }
}

/// Hellinger distance `√(max(0, 1 − E_p[√(q/p)]))`.
pub fn estimate_hellinger<P, Q, S>(
    p: &P,
    q: &Q,
    sampler_p: &S,
    count: usize,
    rng: &mut RngStream,
) -> Result<DivergenceEstimate>
where
    P: DensityEvaluator + ?Sized,
    Q: DensityEvaluator + ?Sized,
    S: Sampler + ?Sized,
{
    estimate_hellinger_squared(p, q, sampler_p, count, rng).map(hellinger_from_squared)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Exact TV between `N(mu1, I)` and `N(mu2, I)`: `2Φ(‖mu1 − mu2‖/2) − 1`.
pub fn gaussian_tv_closed(mu1: &[f64], mu2: &[f64]) -> Result<f64> {
    check_dim(mu1.len(), mu2.len())?;
    let dist = mu1
        .iter()
        .zip(mu2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(gaussian_tv_from_distance(dist))
}

pub(crate) fn gaussian_tv_from_distance(dist: f64) -> f64 {
    erf(dist / (2.0 * std::f64::consts::SQRT_2))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub std_error: f64,
    pub intercept: f64,
}

/// OLS fit of `ln y` on `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(invalid(format!("non-positive coordinate in ({x}, {y})")));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("all x coordinates coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let std_error = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        std_error,
        intercept,
    })
}
