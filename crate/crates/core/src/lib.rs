// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod gmm;
pub mod grad;
pub mod harness;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
