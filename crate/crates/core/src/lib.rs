#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod forest;
pub mod merf;
pub mod numerics;
pub mod stats;
pub mod synth;

pub use error::{MerfError, Result};
