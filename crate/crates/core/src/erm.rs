//! Downstream ERM for linear heads on frozen features: exact least squares and
//! truncated-squared-loss minimization over a Euclidean ball.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{solve_psd, sym_eigen_desc};
use crate::losses::truncated_squared;
use crate::rng::RngStream;

/// Projected gradient settings for truncated-loss ERM.
#[derive(Clone, Debug, PartialEq)]
pub struct PgdConfig {
    pub iterations: usize,
    /// Total starts: the projected OLS solution plus `restarts - 1` uniform draws in the ball.
    pub restarts: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            restarts: 5,
            tolerance: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    /// Normal equations were singular and the pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// Exact least squares `(UᵀU)⁻¹Uᵀy` on feature rows `U`.
pub fn ols(features: &DMatrix<f64>, y: &DVector<f64>) -> OlsFit {
    let gram = features.tr_mul(features);
    let rhs = features.tr_mul(y);
    let (beta, pseudo_inverse) = solve_psd(&gram, &rhs);
    OlsFit {
        beta,
        pseudo_inverse,
    }
}

#[derive(Clone, Debug)]
pub struct TruncatedFit {
    pub beta: DVector<f64>,
    pub objective: f64,
    /// Objective of the OLS solution projected onto the ball.
    pub reference_objective: f64,
    /// The winning start stopped on the step tolerance rather than the budget.
    pub converged: bool,
}

impl TruncatedFit {
    /// Certificate: never worse than projected OLS.
    pub fn certified(&self) -> bool {
        self.objective <= self.reference_objective + 1e-8
    }
}

pub fn truncated_objective(features: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, level: f64) -> f64 {
    let n = y.len().max(1) as f64;
    let pred = features * beta;
    pred.iter()
        .zip(y.iter())
        .map(|(&p, &t)| truncated_squared(p, t, level))
        .sum::<f64>()
        / n
}

fn truncated_gradient(features: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, level: f64) -> DVector<f64> {
    let n = y.len().max(1) as f64;
    let residual = y - features * beta;
    let weights = residual.map(|r| if r * r < level { -2.0 * r / n } else { 0.0 });
    features.tr_mul(&weights)
}

pub fn project_ball(v: &mut DVector<f64>, radius: f64) {
    let norm = v.norm();
    if norm > radius {
        *v *= radius / norm;
    }
}

/// Approximately minimizes `(1/n) Σ min((y − βᵀu)², L)` over `‖β‖₂ ≤ radius`.
///
/// The truncation makes the problem nonconvex, so several starts are run and
/// the best iterate seen on any of them is returned.
pub fn truncated_erm(
    features: &DMatrix<f64>,
    y: &DVector<f64>,
    level: f64,
    radius: f64,
    config: &PgdConfig,
) -> TruncatedFit {
    let r = features.ncols();
    let n = y.len().max(1) as f64;
    let mut start = ols(features, y).beta;
    project_ball(&mut start, radius);
    let reference_objective = truncated_objective(features, y, &start, level);

    let gram = features.tr_mul(features) / n;
    let lambda_max = if r > 0 { sym_eigen_desc(&gram).0[0] } else { 0.0 };
    if lambda_max <= 0.0 {
        return TruncatedFit {
            beta: start,
            objective: reference_objective,
            reference_objective,
            converged: true,
        };
    }
    let step = 1.0 / (2.0 * lambda_max);

    let mut rng = RngStream::new(config.seed, 0);
    let mut best_beta = start.clone();
    let mut best_obj = reference_objective;
    let mut best_converged = false;

    for restart in 0..config.restarts.max(1) {
        let mut beta = if restart == 0 {
            start.clone()
        } else {
            random_in_ball(r, radius, &mut rng)
        };
        let mut converged = false;
        for _ in 0..config.iterations {
            let grad = truncated_gradient(features, y, &beta, level);
            let mut next = &beta - step * grad;
            project_ball(&mut next, radius);
            let moved = (&next - &beta).norm();
            beta = next;
            let obj = truncated_objective(features, y, &beta, level);
            if obj < best_obj {
                best_obj = obj;
                best_beta = beta.clone();
                best_converged = false;
            }
            if moved <= config.tolerance * (1.0 + beta.norm()) {
                converged = true;
                break;
            }
        }
        if converged && (&beta - &best_beta).norm() <= 1e-9 * (1.0 + beta.norm()) {
            best_converged = true;
        }
    }
    if config.iterations == 0 {
        best_converged = true;
    }
    if !best_converged {
        log::debug!("truncated ERM hit its iteration budget");
    }
    TruncatedFit {
        beta: best_beta,
        objective: best_obj,
        reference_objective,
        converged: best_converged,
    }
}

fn random_in_ball(dim: usize, radius: f64, rng: &mut RngStream) -> DVector<f64> {
    let mut v = DVector::from_fn(dim, |_, _| rng.standard_normal());
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    let scale = radius * rng.uniform().powf(1.0 / dim as f64) / norm;
    v *= scale;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> (DMatrix<f64>, DVector<f64>) {
        let u = DMatrix::from_column_slice(6, 1, &[-1.0, -0.5, 0.0, 0.5, 1.0, 1.5]);
        let y = DVector::from_vec(vec![-0.52, -0.24, 0.01, 0.26, 0.49, 0.76]);
        (u, y)
    }

    #[test]
    fn inactive_truncation_returns_ols() {
        let (u, y) = line_data();
        let fit = truncated_erm(&u, &y, 100.0, 10.0, &PgdConfig::default());
        let reference = ols(&u, &y).beta;
        assert!((&fit.beta - reference).norm() < 1e-6);
        assert!(fit.certified());
    }

    #[test]
    fn single_point_is_interpolated() {
        let u = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0]);
        let fit = truncated_erm(&u, &y, 5.0, 10.0, &PgdConfig::default());
        assert!(fit.objective < 1e-20);
    }

    #[test]
    fn ball_constraint_is_respected() {
        let (u, y) = line_data();
        let fit = truncated_erm(&u, &y, 100.0, 0.2, &PgdConfig::default());
        assert!(fit.beta.norm() <= 0.2 + 1e-12);
        assert!((fit.beta[0] - 0.2).abs() < 1e-9);
    }
}
