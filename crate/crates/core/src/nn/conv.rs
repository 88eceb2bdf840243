use alloc::vec::Vec;

use super::param::{Param, ParamId};
use super::Matrix;
use crate::error::{Error, Result};

/// Same-length 1-D convolution with symmetric zero padding:
/// `y[t] = bias + Σ_k kernel[k] · x[t + k - ⌊K/2⌋]`.
pub fn conv1d(signal: &[f64], kernel: &[f64], bias: f64) -> Result<Vec<f64>> {
    if kernel.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument("convolution kernel length must be odd"));
    }
    let half = kernel.len() / 2;
    let n = signal.len();
    Ok((0..n)
        .map(|t| {
            let mut acc = bias;
            for (k, w) in kernel.iter().enumerate() {
                let src = t + k;
                if src >= half && src - half < n {
                    acc += w * signal[src - half];
                }
            }
            acc
        })
        .collect())
}

/// Kernel (`1 x K`) and bias (`1 x 1`) of one single-channel convolution block.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dParams {
    pub kernel: Param,
    pub bias: Param,
}

impl Conv1dParams {
    pub fn new(kernel_id: ParamId, bias_id: ParamId, name: &str, kernel: Vec<f64>) -> Self {
        Self {
            kernel: Param::new(kernel_id, alloc::format!("{name}.kernel"), Matrix::row_vector(kernel)),
            bias: Param::new(bias_id, alloc::format!("{name}.bias"), Matrix::scalar(0.0)),
        }
    }

    pub fn apply(&self, signal: &[f64]) -> Result<Vec<f64>> {
        conv1d(signal, self.kernel.value.as_slice(), self.bias.value.as_slice()[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_kernel() {
        let x = [0.5, -1.0, 2.0, 7.0];
        assert_eq!(conv1d(&x, &[0.0, 1.0, 0.0], 0.0).unwrap(), x.to_vec());
    }

    #[test]
    fn box_filter_on_constant_attenuates_edges() {
        let y = conv1d(&[3.0; 6], &[1.0 / 3.0; 3], 0.0).unwrap();
        for &v in &y[1..5] {
            assert!((v - 3.0).abs() < 1e-15);
        }
        assert!((y[0] - 2.0).abs() < 1e-15 && (y[5] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_double_loop() {
        let x: Vec<f64> = (0..17).map(|i| libm::sin(i as f64 * 0.7) * 3.0).collect();
        let k = [0.3, -1.2, 0.5, 2.0, -0.4];
        let b = 0.25;
        let y = conv1d(&x, &k, b).unwrap();
        // padded-buffer oracle
        let mut padded = vec![0.0; x.len() + 4];
        padded[2..2 + x.len()].copy_from_slice(&x);
        for t in 0..x.len() {
            let mut acc = b;
            for j in 0..5 {
                acc += k[j] * padded[t + j];
            }
            assert!((y[t] - acc).abs() < 1e-12);
        }
        assert!(conv1d(&x, &[1.0, 1.0], 0.0).is_err());
    }
}
