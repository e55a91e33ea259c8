//! Small f64 tensor library with a reverse-mode tape.
//!
//! Attention over sparse node pairs is expressed with three kernels
//! ([`Tape::pair_dot`], [`Tape::pair_softmax`], [`Tape::pair_weighted_sum`]) so
//! masked pairs never enter the computation at all.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{check_op, check_primitives, finite_diff_check, relative_error, GradCheck, MAX_COORDS_PER_TENSOR};
pub use optim::{clip_grad_norm, Adam};
pub use tape::{Gradients, PairIndex, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{Tensor, TensorError};
