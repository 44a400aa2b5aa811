use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// A fixed, ordered set of named trainable tensors.
pub trait Parameters {
    fn named(&self) -> Vec<(&'static str, &Tensor)>;
    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;

    /// Registers every tensor as a graph leaf, in `named()` order.
    fn leaves<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> Result<Vec<Var>> {
        self.named().into_iter().map(|(_, t)| g.leaf_ref(t, trainable)).collect()
    }

    fn num_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}
