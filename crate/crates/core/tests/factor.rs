use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use pretrain_core::factor::{
    align_rotation_factor, factor_neg_log_likelihood, marginal_covariance, mle_factor, mle_factor_from_covariance,
    sample_factor_labeled_data, sample_factor_unlabeled, FactorJoint, FactorModel, RegressionBeta,
};
use pretrain_core::linalg::random_orthogonal;
use pretrain_core::{DensityEvaluator, RngStream};

fn random_loading(d: usize, r: usize, min_sv: f64, rng: &mut RngStream) -> DMatrix<f64> {
    let s: Vec<f64> = (0..r).map(|_| min_sv + 1.5 * rng.uniform()).collect();
    FactorModel::with_singular_values(d, &s, 10.0, rng).unwrap().loading().clone()
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn population_mle_recovers_gram_matrix() {
    let mut rng = RngStream::new(11, 0);
    let mut worst = 0.0f64;
    for t in 0..50 {
        let d = 5 + t % 20;
        let r = 1 + t % 4;
        let b = random_loading(d, r, 0.5, &mut rng);
        let sigma = &b * b.transpose() + DMatrix::identity(d, d);
        let fit = mle_factor_from_covariance(&sigma, r).unwrap();
        let err = (&fit.b_hat * fit.b_hat.transpose() - &b * b.transpose()).norm();
        worst = worst.max(err);
    }
    assert!(worst <= 1e-10, "worst Gram error {worst}");
}

#[test]
fn population_mle_clamps_when_signal_is_absent() {
    let sigma = DMatrix::<f64>::identity(6, 6) * 0.8;
    let fit = mle_factor_from_covariance(&sigma, 2).unwrap();
    assert_eq!(fit.clamped_eigencount, 2);
    assert!(fit.b_hat.norm() == 0.0);
}

#[test]
fn joint_law_is_rotation_invariant() {
    let mut rng = RngStream::new(12, 0);
    let b = random_loading(8, 3, 0.5, &mut rng);
    let o = random_orthogonal(3, &mut rng);
    let rotated = FactorJoint::new(&b * &o);
    let plain = FactorJoint::new(b.clone());
    assert!((marginal_covariance(&(&b * &o)) - marginal_covariance(&b)).norm() <= 1e-12);
    for _ in 0..200 {
        let x: Vec<f64> = (0..8).map(|_| rng.standard_normal()).collect();
        let z = DVector::from_fn(3, |_, _| rng.standard_normal());
        let oz = &o * &z;
        let p1: Vec<f64> = x.iter().copied().chain(z.iter().copied()).collect();
        let p2: Vec<f64> = x.iter().copied().chain(oz.iter().copied()).collect();
        assert!((rotated.log_density(&p1) - plain.log_density(&p2)).abs() <= 1e-12);
    }
}

#[test]
fn mle_beats_random_loadings() {
    let mut rng = RngStream::new(13, 0);
    let model = FactorModel::with_singular_values(10, &[2.0, 1.0], 5.0, &mut rng).unwrap();
    let x = sample_factor_unlabeled(&model, 2000, &mut rng);
    let fit = mle_factor(&x, 2).unwrap();
    let sigma_hat = x.transpose() * &x / 2000.0;
    let best = factor_neg_log_likelihood(&fit.b_hat, &sigma_hat);
    assert!(best <= factor_neg_log_likelihood(model.loading(), &sigma_hat) + 1e-12);
    for _ in 0..200 {
        let scale = 3.0 * rng.uniform();
        let b = DMatrix::from_fn(10, 2, |_, _| scale * rng.standard_normal());
        assert!(best <= factor_neg_log_likelihood(&b, &sigma_hat) + 1e-12);
    }
}

#[test]
fn sample_moments_match_model() {
    let mut rng = RngStream::new(14, 0);
    let model = FactorModel::with_singular_values(4, &[1.5], 5.0, &mut rng).unwrap();
    let beta = RegressionBeta::new(DVector::from_vec(vec![0.7]), 2.0, 0.5).unwrap();
    let m = 200_000;
    let x = sample_factor_unlabeled(&model, m, &mut rng);
    let emp = x.transpose() * &x / m as f64;
    // Entry variance is at most (Σᵢᵢ Σⱼⱼ + Σᵢⱼ²)/m; allow 5 standard errors.
    let sigma = model.covariance();
    let tol = 5.0 * (2.0 * 3.25f64.powi(2) / m as f64).sqrt();
    assert!((emp - &sigma).amax() <= tol);
    let labeled = sample_factor_labeled_data(&model, &beta, m, &mut rng).unwrap();
    let var_y = labeled.y.iter().map(|v| v * v).sum::<f64>() / m as f64;
    assert!((var_y - (0.49 + 0.25)).abs() <= 5.0 * (2.0 * 0.74f64.powi(2) / m as f64).sqrt());
}

#[test]
fn alignment_undoes_rotation() {
    let mut rng = RngStream::new(15, 0);
    let b = random_loading(9, 3, 0.5, &mut rng);
    let o = random_orthogonal(3, &mut rng);
    let rot = align_rotation_factor(&(&b * &o), &b).unwrap();
    assert!((&b * &o * rot - &b).norm() <= 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Eckart-Young plus Weyl: the truncated estimate moves at most twice the covariance error.
    #[test]
    fn gram_error_bounded_by_twice_covariance_error(seed in any::<u64>(), noise in 0.0f64..0.5) {
        let mut rng = RngStream::new(seed, 1);
        let b = random_loading(7, 2, 0.3, &mut rng);
        let g = DMatrix::from_fn(7, 7, |_, _| rng.standard_normal());
        let e = (&g + g.transpose()) * (noise / 2.0);
        let sigma = &b * b.transpose() + DMatrix::identity(7, 7) + &e;
        let fit = mle_factor_from_covariance(&sigma, 2).unwrap();
        let gap = op_norm(&(&fit.b_hat * fit.b_hat.transpose() - &b * b.transpose()));
        prop_assert!(gap <= 2.0 * op_norm(&e) + 1e-10);
    }
}
