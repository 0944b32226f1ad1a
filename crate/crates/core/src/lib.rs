// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod codes;
pub mod error;
pub mod fock;
pub mod optimizer;
pub mod qec;
pub mod rng;
pub mod sweep;

pub use error::{Error, ErrorFamily, Result};
