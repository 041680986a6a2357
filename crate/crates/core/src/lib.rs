//! Probabilistic primitives and reference instantiations for studying how
//! unsupervised pretraining on a latent-variable model speeds up a downstream
//! regression or classification task.
//!
//! Every stochastic routine takes an explicit [`RngStream`], so results are a
//! pure function of the seeds supplied by the caller.

pub mod contrastive;
pub mod counterexample;
pub mod data;
pub mod erm;
pub mod error;
pub mod factor;
pub mod gmm;
pub mod linalg;
pub mod losses;
pub mod prob;
pub mod rng;

pub use data::LabeledData;
pub use error::{Error, Result};
pub use prob::{DensityEvaluator, DivergenceEstimate, Sampler};
pub use rng::RngStream;
