//! Motor-imagery EEG classification with a compact convolutional network,
//! intra-experimental transfer (split and frozen learning) and
//! inter-experimental transfer through head replacement.

// `!(x > 0.0)` checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blob;
pub mod cli;
pub mod data;
pub mod error;
pub mod hypersearch;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod strategies;
pub mod tensor;

pub use error::{Error, Result};
