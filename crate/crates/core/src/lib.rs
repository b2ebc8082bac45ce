//! Laminate-based compliance topology optimisation with neural surrogates.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::manual_clamp)]

pub mod error;
pub mod eval;
pub mod export;
pub mod fem;
pub mod nn;
pub mod paramspace;
pub mod pipeline;
pub mod topopt;
pub mod voigt;

pub use error::{Error, Result};
