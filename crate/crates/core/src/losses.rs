//! Loss functions and the paired Monte-Carlo excess-risk estimator.

use crate::error::{invalid, Result};
use crate::prob::MeanAccumulator;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossSpec {
    Squared,
    /// Squared loss capped at `level`; the cap applies at equality.
    TruncatedSquared { level: f64 },
    ZeroOne,
}

impl LossSpec {
    pub fn truncated(level: f64) -> Result<Self> {
        if level > 0.0 && level.is_finite() {
            Ok(Self::TruncatedSquared { level })
        } else {
            Err(invalid(format!("truncation level must be positive, got {level}")))
        }
    }

    /// Largest value the loss can take, if bounded.
    pub fn bound(&self) -> Option<f64> {
        match *self {
            Self::Squared => None,
            Self::TruncatedSquared { level } => Some(level),
            Self::ZeroOne => Some(1.0),
        }
    }
}

/// Truncation level `36(D²+1)·ln n` used for downstream regression on
/// contrastive features.
pub fn contrastive_truncation_level(norm_bound: f64, n: f64) -> f64 {
    36.0 * (norm_bound * norm_bound + 1.0) * n.ln()
}

/// Truncation level `(D²+1)³·ln n` used for the factor-model ERM.
pub fn factor_truncation_level(norm_bound: f64, n: f64) -> f64 {
    (norm_bound * norm_bound + 1.0).powi(3) * n.ln()
}

pub fn loss_eval(spec: LossSpec, prediction: f64, label: f64) -> Result<f64> {
    match spec {
        LossSpec::Squared => Ok((label - prediction).powi(2)),
        LossSpec::TruncatedSquared { level } => Ok(truncated_squared(prediction, label, level)),
        LossSpec::ZeroOne => {
            let binary = |v: f64| v == 0.0 || v == 1.0;
            if !binary(prediction) || !binary(label) {
                return Err(invalid(format!(
                    "0-1 loss needs binary arguments, got ({prediction}, {label})"
                )));
            }
            Ok(if prediction == label { 0.0 } else { 1.0 })
        }
    }
}

#[inline]
pub fn truncated_squared(prediction: f64, label: f64, level: f64) -> f64 {
    let sq = (label - prediction).powi(2);
    if sq < level {
        sq
    } else {
        level
    }
}

/// Deterministic map from an input to a prediction.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> Predictor for F {
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Draws `(x, y)` pairs from the ground-truth joint law.
pub trait LabeledSampler {
    fn input_dim(&self) -> usize;
    /// Writes `x` into `x_out` and returns `y`.
    fn sample_pair(&self, rng: &mut RngStream, x_out: &mut [f64]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub std_error: f64,
    pub sample_count: usize,
}

/// Mean over fresh test draws of `ℓ(pred(x), y) − ℓ(bayes(x), y)`; both
/// predictors see the same draws.
pub fn excess_risk_mc<P, B, S>(
    pred: &P,
    bayes: &B,
    spec: LossSpec,
    test_sampler: &S,
    count: usize,
    rng: &mut RngStream,
) -> Result<RiskEstimate>
where
    P: Predictor + ?Sized,
    B: Predictor + ?Sized,
    S: LabeledSampler + ?Sized,
{
    if count == 0 {
        return Err(invalid("excess risk needs a positive sample count"));
    }
    let mut x = vec![0.0; test_sampler.input_dim()];
    let mut acc = MeanAccumulator::default();
    for _ in 0..count {
        let y = test_sampler.sample_pair(rng, &mut x);
        let a = loss_eval(spec, pred.predict(&x), y)?;
        let b = loss_eval(spec, bayes.predict(&x), y)?;
        acc.push(a - b);
    }
    Ok(RiskEstimate {
        value: acc.mean(),
        std_error: acc.std_error(),
        sample_count: count,
    })
}
