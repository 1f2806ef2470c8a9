//! Downlink analysis of cell-free massive MIMO with OTFS modulation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod geometry;
pub mod montecarlo;
pub mod otfs;
pub mod rate;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
