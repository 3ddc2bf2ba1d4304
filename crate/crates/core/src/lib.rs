//! Synthetic lab for multi-objective direct preference alignment with
//! reward-consistent data curation.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod analysis;
pub mod curation;
pub mod dataset;
pub mod experiment;
mod error;
pub mod io;
pub mod linalg;
pub mod policy;
pub mod reward;
pub mod world;

pub use error::{Error, Result};
