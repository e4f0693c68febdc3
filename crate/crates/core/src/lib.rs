//! Neural hidden Markov models for unsupervised part-of-speech induction.
//!
//! Emission and transition distributions of a first-order HMM are produced by
//! small neural networks (word lookup or character CNN emissions; static or
//! LSTM-conditioned transitions) and trained by direct marginal likelihood or
//! posterior-scaled generalized EM. Inference is exact forward-backward in log
//! space.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod hmm;
pub mod numerics;
pub mod par;
pub mod potentials;
pub mod training;

pub use error::{Error, Result};
