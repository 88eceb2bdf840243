use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use super::conv::Conv1dParams;
use super::dense::{DenseEstimator, DenseLayer};
use super::param::{Param, ParamId, ParamSet};
use super::tape::{lower_len, strict_upper_len};
use super::Matrix;
use crate::error::{check_len, Error, Result};

/// Architecture of a [`ParameterBundle`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleConfig {
    /// Hidden widths of each dynamic-term estimator.
    pub hidden: Vec<usize>,
    /// Feature channels `C` of the gated temporal features.
    pub channels: usize,
    /// Number of gating stages.
    pub stages: usize,
    /// Gate convolution kernel length (odd).
    pub kernel: usize,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            channels: 128,
            stages: 4,
            kernel: 3,
        }
    }
}

/// Parameters of one gating stage: three independent single-channel
/// convolutions (power, torque, torque change) and the `3C -> C` fuse projection.
#[derive(Debug, Clone, PartialEq)]
pub struct GateStageParams {
    pub convs: [Conv1dParams; 3],
    pub fuse: DenseLayer,
}

pub const GATE_NAMES: [&str; 3] = ["power", "torque", "torque_change"];

/// Every trainable tensor of the pipeline: the inertia, Coriolis, gravity and
/// friction estimators plus the gating stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBundle {
    dof: usize,
    config: BundleConfig,
    pub inertia: DenseEstimator,
    pub coriolis: DenseEstimator,
    pub gravity: DenseEstimator,
    pub friction: DenseEstimator,
    pub gates: Vec<GateStageParams>,
}

impl ParameterBundle {
    pub fn new(dof: usize, config: BundleConfig, seed: u64) -> Result<Self> {
        if dof == 0 {
            return Err(Error::InvalidArgument("degrees of freedom must be positive"));
        }
        if config.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument("gate kernel length must be odd"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = 0;
        let widths = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend_from_slice(&config.hidden);
            w.push(output);
            w
        };
        let inertia = DenseEstimator::new(&mut rng, &widths(dof, lower_len(dof)), "inertia", &mut next);
        let coriolis = DenseEstimator::new(&mut rng, &widths(2 * dof, strict_upper_len(dof)), "coriolis", &mut next);
        let gravity = DenseEstimator::new(&mut rng, &widths(dof, dof), "gravity", &mut next);
        let friction = DenseEstimator::new(&mut rng, &widths(2 * dof, dof), "friction", &mut next);
        let c = config.channels;
        let bound = libm::sqrt(6.0 / (2 * config.kernel) as f64);
        let gates = (0..config.stages)
            .map(|s| {
                let convs = GATE_NAMES.map(|g| {
                    let kernel = (0..config.kernel).map(|_| rng.random_range(-bound..bound)).collect();
                    let p = Conv1dParams::new(ParamId(next), ParamId(next + 1), &format!("gate.{s}.{g}"), kernel);
                    next += 2;
                    p
                });
                let fuse = DenseLayer::glorot(&mut rng, 3 * c, c, Activation::Identity, &format!("gate.{s}.fuse"), &mut next);
                GateStageParams { convs, fuse }
            })
            .collect();
        Ok(Self {
            dof,
            config,
            inertia,
            coriolis,
            gravity,
            friction,
            gates,
        })
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn config(&self) -> &BundleConfig {
        &self.config
    }

    /// Replaces the value of the parameter called `name`; shapes must agree.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self
            .params_mut()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or(Error::InvalidArgument("unknown parameter name"))?;
        check_len("parameter rows", p.value.rows(), value.rows())?;
        check_len("parameter cols", p.value.cols(), value.cols())?;
        p.value = value;
        Ok(())
    }

    /// Dynamic-term estimators only.
    pub fn estimators(&self) -> [&DenseEstimator; 4] {
        [&self.inertia, &self.coriolis, &self.gravity, &self.friction]
    }
}

impl ParamSet for ParameterBundle {
    fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = Vec::new();
        for est in [&self.inertia, &self.coriolis, &self.gravity, &self.friction] {
            out.extend(est.params());
        }
        for g in &self.gates {
            for c in &g.convs {
                out.push(&c.kernel);
                out.push(&c.bias);
            }
            out.push(&g.fuse.weight);
            out.push(&g.fuse.bias);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for est in [&mut self.inertia, &mut self.coriolis, &mut self.gravity, &mut self.friction] {
            out.extend(est.params_mut());
        }
        for g in &mut self.gates {
            for c in &mut g.convs {
                out.push(&mut c.kernel);
                out.push(&mut c.bias);
            }
            out.push(&mut g.fuse.weight);
            out.push(&mut g.fuse.bias);
        }
        out
    }
}
