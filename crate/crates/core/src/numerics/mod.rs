//! Dense tensors, seeded randomness, reverse-mode differentiation and
//! finite-difference gradient checks. Everything is `f64`.

pub mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport, ParamCheck};
pub use rng::{derive_seed, Rng};
pub use tape::{bce_value, Gradients, Tape, Var, BCE_EPS};
pub use tensor::{
    layer_norm, matmul, matmul_nt, matmul_tn, sigmoid, softmax_rows, swiglu_activation, Tensor,
};
