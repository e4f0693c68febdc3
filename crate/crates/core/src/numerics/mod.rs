//! Reverse-mode differentiation core, layer primitives, optimizer and
//! initializers.

mod gradcheck;
mod graph;
pub mod kernels;
mod layers;
mod optim;
mod param;
mod tensor;

pub use gradcheck::{
    finite_diff_check, relative_error, GradCheckReport, ABS_FLOOR, MAX_COORDS_PER_TENSOR,
};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use layers::{
    char_cnn, check_dropout_rate, dropout, lstm_step, pad_char_rows, ConvFilter, LstmLayer,
};
pub use optim::{adam_step, clip_global_norm, global_grad_norm, sgd_step, AdamConfig};
pub use param::{InitSpec, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
