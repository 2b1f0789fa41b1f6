#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod control;
pub mod error;
pub mod framework;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod reduction;
pub mod report;

pub use error::{Error, Result};
