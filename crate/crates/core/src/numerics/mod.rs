//! Dense tensors, a reverse-mode tape and a finite-difference oracle.
//!
//! All arithmetic is `f64` so that central differences at `h = 1e-5` resolve
//! gradients to a relative error well below `1e-4`. Discrete selections made
//! on forward values (top-k, assignments) enter the tape as constants.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{
    check_leaf, finite_diff_check, relative_error, scaled_relative_error, FdReport, DEFAULT_REL_TOL, DEFAULT_STEP, REL_ERR_FLOOR,
};
pub use graph::{sigmoid, softplus, Elementwise, Gradients, Graph, ReduceKind, ReplayPlan, Var};
pub use tensor::{Tensor, MAX_RANK};

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;
