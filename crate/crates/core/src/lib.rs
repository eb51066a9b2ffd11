//! Privacy-preserving data sharing in a mixed-autonomy platoon.
//!
//! A connected automated vehicle shares distorted `(velocity, spacing)`
//! readings of the human-driven vehicle behind it. A particle belief over the
//! driver parameters feeds a learned distortion policy; eavesdroppers try to
//! recover the parameters from what is shared.

// `!(x > 0.0)` is the NaN-rejecting form used throughout the input checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod belief;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
