//! Minimal differentiable kernel: dense estimators, temporal convolution,
//! a reverse-mode tape, Adam and a finite-difference gradient checker.

mod activation;
mod adam;
mod bundle;
mod conv;
mod dense;
mod gradcheck;
mod matrix;
mod param;
mod tape;

pub use activation::{relu, sigmoid, softplus, Activation};
pub use adam::{adam_step, OptimizerState};
pub use bundle::{BundleConfig, GateStageParams, ParameterBundle};
pub use conv::{conv1d, Conv1dParams};
pub use dense::{DenseEstimator, DenseLayer};
pub use gradcheck::{gradcheck, GradCheckConfig, GradCheckReport};
pub use matrix::Matrix;
pub use param::{GradSink, GradientBuffer, Param, ParamId, ParamSet};
pub use tape::{huber, Tape, Var};
