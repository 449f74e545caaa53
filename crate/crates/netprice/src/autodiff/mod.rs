//! Minimal reverse-mode differentiable computation.
//!
//! Dense row-major matrices ([`Tensor`]), constant CSR matrices for
//! neighborhood aggregation ([`SparseMatrix`]), an eager [`Tape`] that
//! records every forward op and replays the chain rule backward, a named
//! [`ParamStore`] with per-group Adam state, and a central-finite-difference
//! gradient checker.

mod gradcheck;
mod params;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, op_suite_reports, GradReport, LossBuilder};
pub use params::{AdamConfig, GroupSnapshot, ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
