use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pretrain_core::gmm::{
    em_from, erm_psi, match_permutation, mle_gmm, posterior_gmm, sample_gmm_labeled_data, sample_gmm_unlabeled,
    separation_holds, GmmModel, LabelerPsi,
};
use pretrain_core::{LabeledData, RngStream};

fn assert_monotone(trace: &[f64], reseeds: &[usize]) {
    for t in 1..trace.len() {
        if reseeds.contains(&(t - 1)) {
            continue;
        }
        let tol = 1e-12 * trace[t - 1].abs().max(1.0);
        assert!(trace[t] >= trace[t - 1] - tol, "drop at {t}: {} -> {}", trace[t - 1], trace[t]);
    }
}

#[test]
fn em_log_likelihood_is_monotone() {
    for seed in 0..10u64 {
        let mut rng = RngStream::new(31, seed);
        let centers = DMatrix::from_fn(3, 2, |_, _| 1.5 * rng.standard_normal());
        let model = GmmModel::new(centers, 100.0).unwrap();
        let x = sample_gmm_unlabeled(&model, 600, &mut rng);
        let fit = mle_gmm(&x, 3, 4, &mut rng).unwrap();
        for run in &fit.runs {
            assert!(run.trace.len() >= 2);
            assert_monotone(&run.trace, &run.reseeds);
        }
    }
}

#[test]
fn em_reseeds_an_empty_cluster() {
    let mut rng = RngStream::new(32, 0);
    let x = DMatrix::from_fn(200, 2, |_, _| rng.standard_normal());
    let init = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1e4, 1e4]);
    let run = em_from(&x, init).unwrap();
    assert_eq!(run.reseeds.first(), Some(&0));
    assert!(run.centers.amax() < 100.0);
    assert_monotone(&run.trace, &run.reseeds);
}

#[test]
fn em_recovers_separated_centers() {
    let mut rng = RngStream::new(33, 0);
    let (k, d) = (3usize, 5usize);
    let a = 100.0 * (d as f64 * (k as f64).ln()).sqrt() / 2f64.sqrt();
    let truth = DMatrix::from_fn(k, d, |i, j| if i == j { a } else { 0.0 });
    assert!(separation_holds(&truth));
    let model = GmmModel::new(truth.clone(), 100.0).unwrap();
    let x = sample_gmm_unlabeled(&model, 3000, &mut rng);
    let fit = mle_gmm(&x, k, 3, &mut rng).unwrap();
    let matching = match_permutation(&fit.centers, &truth).unwrap();
    for i in 0..k {
        let err = (fit.centers.row(matching.perm[i]) - truth.row(i)).norm();
        assert!(err < 0.5, "center {i} off by {err}");
    }
}

#[test]
fn sample_means_match_centers() {
    let mut rng = RngStream::new(34, 0);
    let centers = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, -3.0, 1.0]);
    let model = GmmModel::new(centers, 100.0).unwrap();
    let m = 100_000;
    let x = sample_gmm_unlabeled(&model, m, &mut rng);
    let mean = x.row_sum() / m as f64;
    // Mean is (0, 0.5); per-coordinate variance is at most 1 + 9.
    let tol = 5.0 * (10.0 / m as f64).sqrt();
    assert!((mean[0]).abs() < tol && (mean[1] - 0.5).abs() < tol);
}

#[test]
fn posterior_sums_to_one() {
    let centers = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 2.0]);
    let post = posterior_gmm(&centers, &[0.4]).unwrap();
    assert!((post.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    assert!(post.weights[1] > post.weights[0]);
}

/// Independent oracle: posterior from scratch and the weighted vote.
fn oracle_loss(centers: &DMatrix<f64>, bits: &[u8], data: &LabeledData) -> f64 {
    let k = centers.nrows();
    let mut errors = 0;
    for p in 0..data.len() {
        let logs: Vec<f64> = (0..k).map(|i| -0.5 * (data.x.row(p) - centers.row(i)).norm_squared()).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let margin: f64 = w.iter().zip(bits).map(|(w, &b)| if b == 1 { *w } else { -*w }).sum();
        let pred = if margin >= 0.0 { 1.0 } else { 0.0 };
        if pred != data.y[p] {
            errors += 1;
        }
    }
    errors as f64 / data.len() as f64
}

fn all_bit_patterns(k: usize) -> Vec<Vec<u8>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in [0u8, 1] {
        for mut rest in all_bit_patterns(k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn erm_psi_matches_brute_force(seed in any::<u64>(), k in 1usize..=3, n in 1usize..40) {
        let mut rng = RngStream::new(seed, 2);
        let d = 2;
        let centers = DMatrix::from_fn(k, d, |_, _| 2.0 * rng.standard_normal());
        let x = DMatrix::from_fn(n, d, |_, _| 2.0 * rng.standard_normal());
        let y = DVector::from_fn(n, |_, _| if rng.bernoulli(0.5) { 1.0 } else { 0.0 });
        let data = LabeledData::new(x, y).unwrap();
        let fit = erm_psi(&centers, &data, 0.1).unwrap();
        let mut best: Option<(f64, Vec<u8>)> = None;
        for bits in all_bit_patterns(k) {
            let loss = oracle_loss(&centers, &bits, &data);
            if best.as_ref().map_or(true, |(b, _)| loss < *b) {
                best = Some((loss, bits));
            }
        }
        let (loss, bits) = best.unwrap();
        prop_assert!((fit.empirical_loss - loss).abs() < 1e-12);
        prop_assert_eq!(fit.psi.bits.clone(), bits);
    }

    #[test]
    fn match_permutation_matches_brute_force(seed in any::<u64>(), k in 1usize..=5) {
        let mut rng = RngStream::new(seed, 3);
        let truth = DMatrix::from_fn(k, 3, |_, _| rng.standard_normal());
        let centers = DMatrix::from_fn(k, 3, |_, _| rng.standard_normal());
        let cost = |perm: &[usize]| -> f64 {
            perm.iter().enumerate().map(|(i, &p)| (centers.row(p) - truth.row(i)).norm_squared()).sum()
        };
        let best = all_permutations(k).into_iter().map(|p| cost(&p)).fold(f64::INFINITY, f64::min);
        let m = match_permutation(&centers, &truth).unwrap();
        prop_assert!(m.exhaustive);
        prop_assert!((cost(&m.perm) - best).abs() <= 1e-12 * best.max(1.0));
    }

    #[test]
    fn labeled_sampling_respects_labeler(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 4);
        let centers = DMatrix::from_row_slice(2, 1, &[-500.0, 500.0]);
        let model = GmmModel::new(centers, 1000.0).unwrap();
        let psi = LabelerPsi::new(vec![1, 0], 0.0).unwrap();
        let data = sample_gmm_labeled_data(&model, &psi, 50, &mut rng).unwrap();
        for p in 0..50 {
            let expected = if data.x[(p, 0)] < 0.0 { 1.0 } else { 0.0 };
            prop_assert_eq!(data.y[p], expected);
        }
    }
}
