use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::Matrix;

/// Identifies a parameter tensor within its owning set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named tensor with a shape-congruent gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub id: ParamId,
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    pub fn new(id: ParamId, name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            id,
            name: name.into(),
            value,
            grad,
        }
    }
}

/// An ordered collection of parameters. The order is stable and defines
/// optimizer state layout and checkpoint layout.
pub trait ParamSet {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Adds a gradient buffer into the gradient slots.
    fn accumulate_buffer(&mut self, buffer: &GradientBuffer) {
        for p in self.params_mut() {
            if let Some(g) = buffer.get(p.id) {
                p.grad.add_assign(g);
            }
        }
    }
}

/// Receives parameter gradients from a backward pass.
pub trait GradSink {
    fn accumulate(&mut self, id: ParamId, grad: &Matrix);
}

impl<P: ParamSet> GradSink for P {
    fn accumulate(&mut self, id: ParamId, grad: &Matrix) {
        if let Some(p) = self.params_mut().into_iter().find(|p| p.id == id) {
            p.grad.add_assign(grad);
        }
    }
}

/// Detached gradient storage, so parallel evaluations can run against a
/// shared read-only parameter set and be merged afterwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientBuffer {
    grads: BTreeMap<ParamId, Matrix>,
}

impl GradientBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    /// Sums `other` into `self`.
    pub fn merge(&mut self, other: &GradientBuffer) {
        for (id, g) in &other.grads {
            self.accumulate(*id, g);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Matrix)> {
        self.grads.iter()
    }
}

impl GradSink for GradientBuffer {
    fn accumulate(&mut self, id: ParamId, grad: &Matrix) {
        match self.grads.get_mut(&id) {
            Some(g) => g.add_assign(grad),
            None => {
                self.grads.insert(id, grad.clone());
            }
        }
    }
}
