use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::activation::Activation;
use super::param::{Param, ParamId, ParamSet};
use super::tape::{Tape, Var};
use super::Matrix;
use crate::error::{check_len, Result};

/// Affine map `x · W + b` followed by an activation; `W` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(rng: &mut impl Rng, inputs: usize, outputs: usize, activation: Activation, name: &str, next_id: &mut usize) -> Self {
        let bound = libm::sqrt(6.0 / (inputs + outputs) as f64);
        let w = Matrix::from_fn(inputs, outputs, |_, _| rng.random_range(-bound..bound));
        let weight = Param::new(ParamId(*next_id), format!("{name}.weight"), w);
        let bias = Param::new(ParamId(*next_id + 1), format!("{name}.bias"), Matrix::zeros(1, outputs));
        *next_id += 2;
        Self { weight, bias, activation }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let z = tape.matmul(x, w)?;
        let z = tape.add_row(z, b)?;
        tape.activate(z, self.activation)
    }

    /// Batched evaluation without recording, rows are samples.
    pub fn apply_batch(&self, x: &Matrix) -> Result<Matrix> {
        check_len("dense layer input width", self.inputs(), x.cols())?;
        let mut out = x.matmul(&self.weight.value);
        let b = self.bias.value.as_slice();
        for t in 0..out.rows() {
            for (v, bias) in out.row_mut(t).iter_mut().zip(b) {
                *v = self.activation.apply(*v + bias);
            }
        }
        Ok(out)
    }
}

/// Feed-forward estimator: rectifier hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseEstimator {
    pub layers: Vec<DenseLayer>,
}

impl DenseEstimator {
    /// `widths` = input, hidden..., output.
    pub fn new(rng: &mut impl Rng, widths: &[usize], name: &str, next_id: &mut usize) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Relu };
                DenseLayer::glorot(rng, widths[i], widths[i + 1], act, &format!("{name}.{i}"), next_id)
            })
            .collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::inputs)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    /// Single-sample evaluation by plain loops.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("estimator input", self.input_width(), input.len())?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            let (w, b) = (&layer.weight.value, layer.bias.value.as_slice());
            x = (0..layer.outputs())
                .map(|j| {
                    let z: f64 = x.iter().enumerate().map(|(i, xi)| xi * w.get(i, j)).sum();
                    layer.activation.apply(z + b[j])
                })
                .collect();
        }
        Ok(x)
    }

    pub fn apply_batch(&self, x: &Matrix) -> Result<Matrix> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.apply_batch(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        check_len("estimator input", self.input_width(), tape.value(x)?.cols())?;
        let mut cur = x;
        for layer in &self.layers {
            cur = layer.forward(tape, cur)?;
        }
        Ok(cur)
    }
}

impl ParamSet for DenseEstimator {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}
