// NaN must fail range checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod matlib;
pub mod omodels;
pub mod optprob;
pub mod plant;
pub mod scenarios;
pub mod simulate;
pub mod stabilize;
pub mod subspaces;

pub use error::{Error, Result};
