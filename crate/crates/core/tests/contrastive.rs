use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pretrain_core::contrastive::{
    ascend, default_c3, gradient_check, hellinger_pairs, pair_log_likelihood, project_spectral,
    sample_contrastive_labeled, sample_pairs, verify_weakly_informative_contrastive, ContrastiveModel,
    GRADIENT_CHECK_TOLERANCE,
};
use pretrain_core::factor::RegressionBeta;
use pretrain_core::linalg::{random_orthogonal, spectral_norm};
use pretrain_core::RngStream;

fn model(d: usize, s: &[f64], seed: u64) -> ContrastiveModel {
    ContrastiveModel::with_singular_values(d, s, &mut RngStream::new(seed, 0)).unwrap()
}

#[test]
fn proof_constant_value() {
    let e = 1f64.exp();
    let expected = 0.5 * ((2.0 + e + 1.0 / e) / (2.0 * 2f64.sqrt() - 2.0)).sqrt();
    assert!((default_c3() - expected).abs() < 1e-15);
    assert!((default_c3() - 1.2389).abs() < 1e-4);
}

#[test]
fn gradient_matches_finite_differences() {
    let truth = model(6, &[0.9, 0.6], 41);
    let pairs = sample_pairs(&truth, 400, &mut RngStream::new(41, 1));
    let mut rng = RngStream::new(41, 2);
    for _ in 0..20 {
        let mut theta = DMatrix::from_fn(2, 6, |_, _| rng.standard_normal());
        project_spectral(&mut theta);
        let err = gradient_check(&theta, &pairs).unwrap();
        assert!(err <= GRADIENT_CHECK_TOLERANCE, "relative error {err}");
    }
}

#[test]
fn likelihood_is_invariant_to_left_rotation() {
    let truth = model(5, &[1.0, 0.5, 0.25], 42);
    let pairs = sample_pairs(&truth, 300, &mut RngStream::new(42, 1));
    let o = random_orthogonal(3, &mut RngStream::new(42, 2));
    let a = pair_log_likelihood(truth.theta(), &pairs).unwrap();
    let b = pair_log_likelihood(&(&o * truth.theta()), &pairs).unwrap();
    assert!((a - b).abs() <= 1e-12);
}

#[test]
fn ascent_trace_is_monotone_and_moves_toward_truth() {
    let truth = model(6, &[1.0, 1.0], 43);
    let pairs = sample_pairs(&truth, 50_000, &mut RngStream::new(43, 1));
    let mut rng = RngStream::new(43, 2);
    let mut init = DMatrix::from_fn(2, 6, |_, _| rng.standard_normal());
    init *= 0.5 / spectral_norm(&init);
    let run = ascend(&pairs, init.clone(), 500, 1e-10).unwrap();
    for w in run.trace.windows(2) {
        assert!(w[1] >= w[0]);
    }
    assert!(spectral_norm(&run.theta) <= 1.0 + 1e-12);
    let h_start = hellinger_pairs(&init, truth.theta(), 20_000, &mut RngStream::new(43, 3)).unwrap();
    let mut previous = h_start.value;
    for budget in [5, 50, 500] {
        let partial = ascend(&pairs, init.clone(), budget, 1e-10).unwrap();
        let h = hellinger_pairs(&partial.theta, truth.theta(), 20_000, &mut RngStream::new(43, 3)).unwrap();
        assert!(h.value <= previous + 1e-3, "budget {budget}: {} after {previous}", h.value);
        previous = h.value;
    }
    assert!(previous < h_start.value);
}

#[test]
fn hellinger_vanishes_at_truth() {
    let truth = model(4, &[0.8], 44);
    let h = hellinger_pairs(truth.theta(), truth.theta(), 1000, &mut RngStream::new(44, 1)).unwrap();
    assert_eq!(h.value, 0.0);
}

#[test]
fn labeled_variance_matches_model() {
    let truth = model(5, &[1.0, 0.7], 45);
    let beta = RegressionBeta::new(DVector::from_vec(vec![0.6, -0.8]), 1.0, 0.5).unwrap();
    let n = 200_000;
    let data = sample_contrastive_labeled(&truth, &beta, n, &mut RngStream::new(45, 1)).unwrap();
    // E[(wᵀx)²] = ‖w‖²/d on the unit sphere.
    let w = truth.theta().tr_mul(beta.beta());
    let expected = w.norm_squared() / 5.0 + 1.0 + 0.25;
    let var = data.y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    assert!((var - expected).abs() <= 5.0 * (3.0 * expected * expected / n as f64).sqrt());
}

#[test]
fn weak_informativeness_is_exact_at_truth() {
    let truth = model(6, &[1.0, 0.8], 46);
    let beta = DVector::from_vec(vec![1.0, 0.0]);
    let report =
        verify_weakly_informative_contrastive(truth.theta(), truth.theta(), &beta, default_c3(), 2000, &mut RngStream::new(46, 1))
            .unwrap();
    assert!(report.lhs.value <= 1e-12);
    assert!(report.holds);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_lands_in_unit_ball(seed in any::<u64>(), scale in 0.01f64..10.0) {
        let mut rng = RngStream::new(seed, 5);
        let mut theta = DMatrix::from_fn(3, 7, |_, _| scale * rng.standard_normal());
        let before = theta.clone();
        project_spectral(&mut theta);
        let norm = spectral_norm(&theta);
        prop_assert!(norm <= 1.0 + 1e-12);
        if spectral_norm(&before) <= 1.0 {
            prop_assert_eq!(theta, before);
        }
    }
}
