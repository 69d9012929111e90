//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of one computation. Leaves are either
//! trainable ([`Tape::param`]) or constant ([`Tape::constant`]); a
//! [`Tape::stop_gradient`] node copies its input's value into a fresh
//! constant leaf, so nothing upstream of it can receive a gradient through it.

pub mod gradcheck;
mod tape;
mod tensor;

pub use tape::{log_add_exp, log_sum_exp_iter, BinaryOp, Gradients, Tape, UnaryOp, Var};
pub use tensor::Tensor;
