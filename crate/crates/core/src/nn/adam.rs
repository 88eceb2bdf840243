use alloc::vec::Vec;

use super::param::ParamSet;
use super::Matrix;

/// Adam moment accumulators and hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update; gradient slots are zeroed afterwards.
pub fn adam_step(params: &mut impl ParamSet, state: &mut OptimizerState) {
    let mut list = params.params_mut();
    if state.first.len() != list.len() {
        state.first = list.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        state.second = state.first.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(state.beta1, t as f64);
    let c2 = 1.0 - libm::pow(state.beta2, t as f64);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    for ((p, m), v) in list.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let it = p
            .value
            .as_mut_slice()
            .iter_mut()
            .zip(p.grad.as_slice())
            .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
        for ((w, &g), (mi, vi)) in it {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
        p.grad.fill(0.0);
    }
}
