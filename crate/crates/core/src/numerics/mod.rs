//! Dense linear algebra and quasi-Newton minimization shared by the model
//! fits.

mod bfgs;
mod linalg;

pub use bfgs::{bfgs_minimize, grad_check, BfgsOptions, OptimizeResult, StopReason};
pub use linalg::{add_diagonal, cholesky, log_det, min_norm_lstsq, symmetrize, CholeskyFactor};
