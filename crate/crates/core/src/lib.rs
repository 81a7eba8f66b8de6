//! Graph neural networks driven by Kuramoto phase dynamics.
//!
//! Node features are encoded into natural frequencies, coupled through an
//! attention matrix, and integrated as a system of oscillators before a
//! linear decoder. Linear and modified graph-diffusion fields are provided
//! as baselines, together with synchronization diagnostics.

// `!(x > 0.0)` is used deliberately so NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod experiments;
mod fastmath;
pub mod graph;
pub mod integrate;
pub mod model;
pub mod syncdiag;
pub mod train;

pub use error::{Error, Result};
