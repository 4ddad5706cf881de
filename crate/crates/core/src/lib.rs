// Validation uses `!(x > 0.0)` so NaN is rejected along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod events;
pub mod model;
pub mod snn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
