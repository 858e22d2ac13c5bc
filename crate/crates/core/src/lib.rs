#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod datasets;
pub mod embedding;
pub mod error;
pub mod fl;
pub mod models;
pub mod numerics;
pub mod partitioner;
pub mod runner;
pub mod tabular;

pub use error::{Error, Result};
