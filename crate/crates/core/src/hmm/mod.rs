//! Exact HMM inference on a boundary-augmented lattice, the classical
//! count-based EM baseline, and enumeration oracles.

mod classical;
mod inference;
mod lattice;
pub mod oracle;

pub use classical::{classical_em_train, em_iteration, EmRun, HmmParams, PROB_FLOOR};
pub use inference::{
    backward, forward, marginal_adjoint, posteriors, viterbi, ForwardResult, MarginalAdjoint,
};
pub use lattice::{LatticePotentials, LogTransitions, PosteriorTable};
