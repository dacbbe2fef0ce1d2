// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod app;
pub mod bsde;
pub mod diagnostics;
pub mod error;
pub mod fbsde;
pub mod market;
pub mod paths;
pub mod utility;

pub use error::{Error, Result};
