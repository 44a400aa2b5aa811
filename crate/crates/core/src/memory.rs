//! Global pattern memory queried by local statistics.
//!
//! The bank holds `L` learned rows of width `d_G`. A query is an affine map
//! of `[z ‖ z′ ‖ x̃]`; the readout is the softmax-weighted sum of bank rows,
//! then projected back to the `d` input variables so it can be averaged with
//! the other `d`-wide estimates.

use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::glorot_bound;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    /// `L × d_G` pattern rows.
    pub g: Tensor,
    /// `d_G × 3d` query weights.
    pub w_q: Tensor,
    /// `1 × d_G` query bias.
    pub b_q: Tensor,
    /// `d_G × d` readout projection.
    pub proj: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct MemoryVars {
    pub g: Var,
    pub w_q: Var,
    pub b_q: Var,
    pub proj: Var,
}

impl MemoryBank {
    pub fn zeros(slots: usize, slot_dim: usize, d: usize) -> Self {
        MemoryBank {
            g: Tensor::zeros(&[slots, slot_dim]),
            w_q: Tensor::zeros(&[slot_dim, 3 * d]),
            b_q: Tensor::zeros(&[1, slot_dim]),
            proj: Tensor::zeros(&[slot_dim, d]),
        }
    }

    /// Bank rows uniform in ±0.1, Glorot-uniform query and projection.
    pub fn init<R: Rng + ?Sized>(slots: usize, slot_dim: usize, d: usize, rng: &mut R) -> Self {
        MemoryBank {
            g: Tensor::uniform(&[slots, slot_dim], 0.1, rng),
            w_q: Tensor::uniform(&[slot_dim, 3 * d], glorot_bound(3 * d, slot_dim), rng),
            b_q: Tensor::zeros(&[1, slot_dim]),
            proj: Tensor::uniform(&[slot_dim, d], glorot_bound(slot_dim, d), rng),
        }
    }

    pub fn slots(&self) -> usize {
        self.g.shape()[0]
    }

    pub fn slot_dim(&self) -> usize {
        self.g.shape()[1]
    }

    /// `q = W_q [z ‖ z′ ‖ x̃] + b_q` for a single step.
    pub fn query(&self, z: &[f64], z_back: &[f64], x_tilde: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let row = |g: &mut Graph<'_>, v: &[f64]| g.constant(Tensor::row_vector(v));
        let (a, b, c) = (row(&mut g, z)?, row(&mut g, z_back)?, row(&mut g, x_tilde)?);
        let q = build_query(&mut g, &vars, a, b, c)?;
        Ok(g.value(q).data().to_vec())
    }

    /// Attention weights `s = softmax(G q)` and readout `a = Σ_l s_l G(l)`.
    pub fn attend(&self, q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let q = g.constant(Tensor::row_vector(q))?;
        let (s, a) = attend(&mut g, &vars, q)?;
        Ok((g.value(s).data().to_vec(), g.value(a).data().to_vec()))
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> Result<MemoryVars> {
        Ok(MemoryVars {
            g: g.leaf_ref(&self.g, trainable)?,
            w_q: g.leaf_ref(&self.w_q, trainable)?,
            b_q: g.leaf_ref(&self.b_q, trainable)?,
            proj: g.leaf_ref(&self.proj, trainable)?,
        })
    }
}

/// Batched query: each argument is `batch × d`; returns `batch × d_G`.
pub fn build_query(g: &mut Graph<'_>, m: &MemoryVars, z: Var, z_back: Var, x_tilde: Var) -> Result<Var> {
    let d = g.value(z).cols();
    if g.value(z_back).cols() != d || g.value(x_tilde).cols() != d || g.value(m.w_q).cols() != 3 * d {
        return Err(Error::ShapeMismatch {
            op: "build_query",
            lhs: g.value(z).shape().to_vec(),
            rhs: g.value(m.w_q).shape().to_vec(),
        });
    }
    let keys = g.concat_cols(&[z, z_back, x_tilde])?;
    let q = g.matmul_bt(keys, m.w_q)?;
    g.add(q, m.b_q)
}

/// Batched attention over the bank: returns `(s, a)` with `s` of shape
/// `batch × L` and `a` of shape `batch × d_G`.
pub fn attend(g: &mut Graph<'_>, m: &MemoryVars, q: Var) -> Result<(Var, Var)> {
    let logits = g.matmul_bt(q, m.g)?;
    let s = g.softmax_rows(logits)?;
    let a = g.matmul(s, m.g)?;
    Ok((s, a))
}

/// Maps a `batch × d_G` readout to `batch × d`.
pub fn project_readout(g: &mut Graph<'_>, m: &MemoryVars, a: Var) -> Result<Var> {
    g.matmul(a, m.proj)
}
