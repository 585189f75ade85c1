//! Reverse-mode gradient engine.

mod gradcheck;
mod jet;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, check_gradient, relative_error};
pub use jet::{add3, dot3, lerp3, matmul3, matvec, matvec_t, scale3, sub3, v3, Jet, Real, V3};
pub use tape::{BackwardStats, CustomOp, OpKind, Tape, Var};
pub use tensor::Tensor;
