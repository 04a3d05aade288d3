// Config validation writes `!(x >= 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod comm;
pub mod constraints;
pub mod env;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod marl;
pub mod methods;
pub mod nn;
pub mod numeric;
pub mod seed;

pub use error::{Error, Result};
