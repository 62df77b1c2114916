//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass. Calling
//! [`Tape::backward`] on a scalar node sweeps the tape in reverse recording
//! order and accumulates gradients for all ancestors.
//!
//! Conventions at non-differentiable points are fixed:
//! - `relu'(0) = 0`
//! - the derivative of `clamp_max(x, c)` at `x = c` is 0
//! - min/max reductions route the gradient to the lowest index on ties

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    check_primitive, primitive_suite, primitive_suite_cases, GradCheckReport, Primitive,
};
pub use tape::{sigmoid, BinaryOp, Gradients, ReduceOp, Tape, UnaryOp, Var};
pub use tensor::Tensor;
