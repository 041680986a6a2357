//! A discrete family on which fitting the downstream head by likelihood
//! instead of risk fails: `x = z` with geometric-type masses, and two
//! labelers, `ψ₁: y = z` and `ψ₂: y ⟂ z`.

use crate::error::{invalid, Result};
use crate::rng::RngStream;

/// Support points summed explicitly before the closed-form tail.
pub const SUPPORT_CUTOFF: u32 = 60;

/// `½(1 − e⁻¹)e⁻¹`.
pub fn failure_target() -> f64 {
    let inv_e = (-1.0f64).exp();
    0.5 * (1.0 - inv_e) * inv_e
}

/// `φᵢ`; `i = 1` is the truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct DiscretePhi(u32);

impl DiscretePhi {
    pub fn new(index: u32) -> Result<Self> {
        if index == 0 {
            return Err(invalid("phi index starts at 1"));
        }
        Ok(Self(index))
    }

    pub fn truth() -> Self {
        Self(1)
    }

    pub fn index(&self) -> u32 {
        self.0
    }

    /// `P(x = k, z = k)`.
    pub fn mass(&self, k: u32) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let i = self.0;
        if i >= 2 {
            if k == 1 {
                return 0.5 + pow2_neg(i);
            }
            if k == i {
                return 0.0;
            }
        }
        pow2_neg(k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DiscretePsi {
    Psi1,
    Psi2,
}

impl DiscretePsi {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiscretePsi::Psi1 => "psi1",
            DiscretePsi::Psi2 => "psi2",
        }
    }

    /// `P(y | z)`.
    pub fn conditional(&self, y: u32, z: u32) -> f64 {
        match self {
            DiscretePsi::Psi1 => (y == z) as u8 as f64,
            DiscretePsi::Psi2 => psi2_mass(y),
        }
    }
}

fn pow2_neg(k: u32) -> f64 {
    (-(k as f64)).exp2()
}

fn psi2_mass(y: u32) -> f64 {
    match y {
        0 => 0.0,
        1 => 0.25,
        2 => 0.5,
        _ => pow2_neg(y),
    }
}

/// Draw from `P(x = k) = 2^{-k}`, `k ≥ 1`.
pub fn sample_geometric(rng: &mut RngStream) -> u32 {
    loop {
        let u = rand::RngCore::next_u64(rng);
        if u == 0 {
            log::debug!("all-zero word in geometric draw; redrawing");
            continue;
        }
        let x = u.trailing_zeros() + 1;
        if x > SUPPORT_CUTOFF {
            log::info!("geometric draw {x} beyond the explicit support cutoff {SUPPORT_CUTOFF}");
        }
        return x;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterSample {
    pub unlabeled: Vec<u32>,
    /// `(x, y)` pairs under `(φ₁, ψ₁)`, so `y = x`.
    pub labeled: Vec<(u32, u32)>,
}

pub fn sample_counter(m: usize, n: usize, rng: &mut RngStream) -> CounterSample {
    let unlabeled = (0..m).map(|_| sample_geometric(rng)).collect();
    let labeled = (0..n)
        .map(|_| {
            let x = sample_geometric(rng);
            (x, x)
        })
        .collect();
    CounterSample { unlabeled, labeled }
}

/// Log-likelihood of `φᵢ` on `xs` minus that of `φ₁`. Only `x = 1` and
/// `x = i` distinguish the models, so this is exact even where
/// `½ + 2^{-i}` rounds to `½`.
pub fn phi_relative_log_likelihood(phi: DiscretePhi, xs: &[u32]) -> f64 {
    let i = phi.index();
    if i == 1 {
        return 0.0;
    }
    if xs.contains(&i) {
        return f64::NEG_INFINITY;
    }
    let ones = xs.iter().filter(|&&x| x == 1).count() as f64;
    if ones == 0.0 {
        0.0
    } else {
        ones * (2.0 * pow2_neg(i)).ln_1p()
    }
}

/// Phase-1 MLE over `φ₁ … φ_{max+1}`; ties go to the smallest index.
pub fn mle_phi(xs: &[u32]) -> Result<DiscretePhi> {
    if xs.is_empty() {
        return Err(invalid("phase-1 MLE needs a nonempty sample"));
    }
    let max = *xs.iter().max().expect("nonempty");
    let mut best = DiscretePhi::truth();
    let mut best_ll = 0.0;
    for i in 2..=max.saturating_add(1) {
        let phi = DiscretePhi(i);
        let ll = phi_relative_log_likelihood(phi, xs);
        if ll > best_ll {
            best_ll = ll;
            best = phi;
        }
    }
    Ok(best)
}

/// `P(y | x)` under `(φ, ψ)`. Where `φ` gives `x` no mass the posterior over
/// `z` falls back to the prior `P_φ(z)`.
pub fn label_conditional(phi: DiscretePhi, psi: DiscretePsi, x: u32, y: u32) -> f64 {
    if phi.mass(x) > 0.0 {
        psi.conditional(y, x)
    } else {
        match psi {
            DiscretePsi::Psi1 => phi.mass(y),
            DiscretePsi::Psi2 => psi2_mass(y),
        }
    }
}

/// Phase-2 MLE over `{ψ₁, ψ₂}` given `φ̂`. The factor `∏ P_φ̂(x)` is shared
/// by both candidates and dropped. Ties go to `ψ₁`.
pub fn mle_psi(phi: DiscretePhi, labeled: &[(u32, u32)]) -> DiscretePsi {
    let ll = |psi: DiscretePsi| -> f64 {
        labeled
            .iter()
            .map(|&(x, y)| label_conditional(phi, psi, x, y).ln())
            .sum()
    };
    if ll(DiscretePsi::Psi2) > ll(DiscretePsi::Psi1) {
        DiscretePsi::Psi2
    } else {
        DiscretePsi::Psi1
    }
}

/// Two-phase MLE: likelihood in both phases.
pub fn two_phase_mle(sample: &CounterSample) -> Result<(DiscretePhi, DiscretePsi)> {
    if sample.labeled.is_empty() {
        return Err(invalid("phase-2 MLE needs labeled data"));
    }
    let phi = mle_phi(&sample.unlabeled)?;
    Ok((phi, mle_psi(phi, &sample.labeled)))
}

/// Bayes prediction (0-1 loss) under `(φ, ψ)`; ties go to the smaller label.
pub fn predict_counter(phi: DiscretePhi, psi: DiscretePsi, x: u32) -> u32 {
    match psi {
        DiscretePsi::Psi2 => 2,
        DiscretePsi::Psi1 => {
            if phi.mass(x) > 0.0 {
                x
            } else {
                1
            }
        }
    }
}

/// Empirical 0-1 risk of the Bayes predictor under `(φ, ψ)`.
pub fn empirical_zero_one_counter(phi: DiscretePhi, psi: DiscretePsi, labeled: &[(u32, u32)]) -> f64 {
    if labeled.is_empty() {
        return 0.0;
    }
    let errors = labeled
        .iter()
        .filter(|&&(x, y)| predict_counter(phi, psi, x) != y)
        .count();
    errors as f64 / labeled.len() as f64
}

/// MLE for `φ`, then 0-1 ERM over `{ψ₁, ψ₂}`; ties go to `ψ₁`.
pub fn mle_erm_counter(sample: &CounterSample) -> Result<(DiscretePhi, DiscretePsi)> {
    let phi = mle_phi(&sample.unlabeled)?;
    let r1 = empirical_zero_one_counter(phi, DiscretePsi::Psi1, &sample.labeled);
    let r2 = empirical_zero_one_counter(phi, DiscretePsi::Psi2, &sample.labeled);
    Ok((phi, if r2 < r1 { DiscretePsi::Psi2 } else { DiscretePsi::Psi1 }))
}

/// Exact TV between the `(x, y)` laws of `(φ_a, ψ_a)` and `(φ_b, ψ_b)`.
pub fn tv_counter_between(a: (DiscretePhi, DiscretePsi), b: (DiscretePhi, DiscretePsi)) -> f64 {
    let cutoff = SUPPORT_CUTOFF.max(a.0.index() + 1).max(b.0.index() + 1);
    if a.1 == b.1 {
        // the conditional factor integrates out
        let sum: f64 = (1..=cutoff).map(|k| (a.0.mass(k) - b.0.mass(k)).abs()).sum();
        return 0.5 * sum;
    }
    let (p, q) = if a.1 == DiscretePsi::Psi2 { (a.0, b.0) } else { (b.0, a.0) };
    let mut sum = 0.0;
    for k in 1..=cutoff {
        let ap = p.mass(k);
        let aq = q.mass(k);
        let c = psi2_mass(k);
        // y ≠ k carries only ψ₂ mass; y = k carries both
        sum += ap * (1.0 - c) + (ap * c - aq).abs();
    }
    // beyond the cutoff both φ masses are 2^{-k}: Σ_{k>N} 2(2^{-k} − 4^{-k})
    let n = cutoff as f64;
    let tail = 2.0 * ((-n).exp2() - (-2.0 * n).exp2() / 3.0);
    0.5 * (sum + tail)
}

/// TV of `(φ, ψ)` against the truth `(φ₁, ψ₁)`.
pub fn tv_counter(phi: DiscretePhi, psi: DiscretePsi) -> f64 {
    tv_counter_between((phi, psi), (DiscretePhi::truth(), DiscretePsi::Psi1))
}

/// `P(y = label)` under `(φ, ψ)`, summed to the cutoff plus the exact tail.
pub fn label_marginal(phi: DiscretePhi, psi: DiscretePsi, label: u32) -> f64 {
    match psi {
        DiscretePsi::Psi1 => phi.mass(label),
        DiscretePsi::Psi2 => psi2_mass(label),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FailureReport {
    pub frequency: f64,
    pub std_error: f64,
    pub target: f64,
    pub threshold_met: bool,
    pub trials: usize,
}

/// Frequency over trials of `TV ≥ 1/8` for two-phase MLE with `m = n = 2^L`.
pub fn failure_probability_mc(l_exponent: u32, trials: usize, rng: &RngStream) -> Result<FailureReport> {
    if trials < 100 {
        return Err(invalid(format!("need at least 100 trials, got {trials}")));
    }
    if l_exponent > 30 {
        return Err(invalid("L exponent too large"));
    }
    let size = 1usize << l_exponent;
    let mut hits = 0usize;
    for trial in 0..trials {
        let mut stream = rng.split(trial as u64);
        let sample = sample_counter(size, size, &mut stream);
        let (phi, psi) = two_phase_mle(&sample)?;
        if tv_counter(phi, psi) >= 0.125 {
            hits += 1;
        }
    }
    let frequency = hits as f64 / trials as f64;
    let std_error = (frequency * (1.0 - frequency) / trials as f64).sqrt();
    let target = failure_target();
    Ok(FailureReport {
        frequency,
        std_error,
        target,
        threshold_met: frequency >= target - 3.0 * std_error,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_constant() {
        assert!((failure_target() - 0.11627).abs() < 5e-6);
    }

    #[test]
    fn phase_one_examples() {
        assert_eq!(mle_phi(&[1, 2]).unwrap().index(), 3);
        assert_eq!(mle_phi(&[2, 3]).unwrap().index(), 1);
        assert_eq!(mle_phi(&[1, 3, 1]).unwrap().index(), 2);
        assert!(mle_phi(&[]).is_err());
    }

    #[test]
    fn phase_two_picks_psi2_when_index_observed() {
        let phi = DiscretePhi::new(3).unwrap();
        assert_eq!(mle_psi(phi, &[(1, 1), (3, 3)]), DiscretePsi::Psi2);
        assert_eq!(mle_psi(phi, &[(1, 1), (2, 2)]), DiscretePsi::Psi1);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_counter(DiscretePhi::truth(), DiscretePsi::Psi1), 0.0);
        for i in 2..70 {
            let phi = DiscretePhi::new(i).unwrap();
            assert!(tv_counter(phi, DiscretePsi::Psi2) >= 0.125);
            assert!((tv_counter(phi, DiscretePsi::Psi1) - pow2_neg(i)).abs() < 1e-16);
        }
    }

    #[test]
    fn label_two_marginals() {
        let phi = DiscretePhi::new(5).unwrap();
        assert_eq!(label_marginal(phi, DiscretePsi::Psi2, 2), 0.5);
        assert_eq!(label_marginal(DiscretePhi::truth(), DiscretePsi::Psi1, 2), 0.25);
    }
}
