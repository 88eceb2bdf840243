//! Training driver, file formats and command-line front end for the
//! Lagrangian dynamics core.

// `!(x > 0.0)` is how NaN is rejected alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod formats;
pub mod train;
