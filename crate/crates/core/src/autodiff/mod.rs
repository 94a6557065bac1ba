//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Values are computed eagerly when an operation is recorded. [`Tape::backward`]
//! sweeps the record once in reverse on plain values; [`Tape::grad_wrt`]
//! records its vector-Jacobian products as new tape nodes so a gradient can be
//! used inside a model and differentiated again during training.

mod tape;
mod tensor;

pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
