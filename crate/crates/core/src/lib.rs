#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod data;
pub mod enhance;
pub mod error;
pub mod graphs;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
