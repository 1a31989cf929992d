// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod link;
pub mod photonic;
pub mod protocol;
pub mod security;
pub mod sync;

pub use error::{Error, Result};
