//! Neural parameterization of HMM emission and transition distributions.

mod config;
mod lattice_op;
mod model;

pub use config::{
    EmissionMode, ModelConfig, TransitionMode, DEFAULT_HIDDEN, DEFAULT_HIDDEN_CHAR_CNN,
};
pub use lattice_op::{
    assemble_potentials, batch_potentials, contextual_rows, emission_slice, expected_complete_nll,
    lattice_nll, BatchNll, LatticeInputs, TransitionInputs,
};
pub use model::{EmissionNet, NeuralHmm, TransitionContext, TransitionNet, WordRepr};
