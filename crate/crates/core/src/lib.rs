#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod limit;
pub mod model;
pub mod quad;
pub mod rng;
pub mod samplers;
pub mod special;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
