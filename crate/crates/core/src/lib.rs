//! Lagrangian dynamics synthesis for skeletal motion.
//!
//! The crate turns Cartesian joint trajectories into generalized coordinates,
//! estimates inertia, Coriolis, gravity and friction terms with networks whose
//! structure guarantees a symmetric positive-definite inertia matrix and a
//! passive Coriolis matrix, synthesizes generalized forces, and supervises
//! them with a work-energy residual. Dynamic gating signals, a trough-based
//! boundary detector, segmentation metrics and an analytic planar-pendulum
//! oracle complete the pipeline.
//!
//! Everything here is `no_std` with `alloc`; file formats, the training
//! driver and the command-line interface live in the `lagdyn` crate.

#![no_std]
#![allow(clippy::needless_range_loop)]
// `!(x > 0.0)` is how NaN is rejected alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dynamics;
pub mod energy;
mod error;
pub mod eval;
pub mod kinematics;
pub mod linalg;
pub mod nn;
pub mod objective;
pub mod oracle;
pub mod signals;

pub use error::{Error, Result};
