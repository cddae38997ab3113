//! Latent subclass learning (LSL) probes.
//!
//! An LSL probe is a binary classifier over span features whose positive
//! logit is the log-sum-exp of `N` latent class logits. Training it on
//! binary labels, with entropy regularizers on the latent distribution,
//! induces a clustering of the positive examples that can be compared to
//! gold fine-grained labels.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod lsl;
pub mod math;
pub mod metrics;
pub mod model;
pub mod probe;
pub mod reporting;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use lsl::{LatentPosterior, LslHead, Regularization};
pub use model::{Model, ModelShape};
pub use probe::ProbeParams;
