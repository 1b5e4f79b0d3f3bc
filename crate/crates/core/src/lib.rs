//! Statistical downscaling of coarse areal data. Auxiliary datasets on
//! arbitrary partitions are first smoothed by independent Gaussian processes;
//! their posteriors then enter a linear-Gaussian model whose aggregate matches
//! the coarse observations, giving a closed-form fine-level posterior.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod downscale;
pub mod error;
pub mod eval;
pub mod geo;
pub mod gp_aux;
pub mod kernel;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
