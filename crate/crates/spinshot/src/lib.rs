//! Single-shot spin readout fidelity: analytic model and Monte-Carlo oracle.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod electrical;
pub mod error;
pub mod fidelity;
pub mod filter;
pub mod initfid;
pub mod model;
pub mod montecarlo;
pub mod quad;
pub mod sequencer;
pub mod stc;

pub use error::{Error, Result};
