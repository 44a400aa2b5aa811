//! Convolutional Wasserstein critic over `k′ × d` snippets.
//!
//! Architecture: two 3×3 "same" convolutions (64 and 128 channels), a
//! 1024-wide fully connected layer and a scalar output, with leaky-ReLU
//! between layers. The flattened width feeding the first dense layer is
//! `conv2 · k′ · d` and is fixed when the parameters are created.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{glorot_bound, Parameters};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticConfig {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden: usize,
    pub leak: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig { conv1_channels: 64, conv2_channels: 128, hidden: 1024, leak: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams {
    pub config: CriticConfig,
    pub rows: usize,
    pub cols: usize,
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

/// Graph handles for a bound [`CriticParams`].
#[derive(Clone, Copy, Debug)]
pub struct CriticVars {
    rows: usize,
    cols: usize,
    leak: f64,
    conv1_w: Var,
    conv1_b: Var,
    conv2_w: Var,
    conv2_b: Var,
    fc1_w: Var,
    fc1_b: Var,
    fc2_w: Var,
    fc2_b: Var,
}

impl CriticParams {
    /// All-zero critic for snippets of `rows × cols`.
    pub fn zeros(rows: usize, cols: usize, config: CriticConfig) -> Self {
        let (c1, c2, h) = (config.conv1_channels, config.conv2_channels, config.hidden);
        CriticParams {
            config,
            rows,
            cols,
            conv1_w: Tensor::zeros(&[c1, 1, 3, 3]),
            conv1_b: Tensor::zeros(&[c1]),
            conv2_w: Tensor::zeros(&[c2, c1, 3, 3]),
            conv2_b: Tensor::zeros(&[c2]),
            fc1_w: Tensor::zeros(&[c2 * rows * cols, h]),
            fc1_b: Tensor::zeros(&[1, h]),
            fc2_w: Tensor::zeros(&[h, 1]),
            fc2_b: Tensor::zeros(&[1, 1]),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(rows: usize, cols: usize, config: CriticConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(rows, cols, config);
        let (c1, c2, h) = (config.conv1_channels, config.conv2_channels, config.hidden);
        let flat = c2 * rows * cols;
        p.conv1_w = Tensor::uniform(&[c1, 1, 3, 3], glorot_bound(9, c1 * 9), rng);
        p.conv2_w = Tensor::uniform(&[c2, c1, 3, 3], glorot_bound(c1 * 9, c2 * 9), rng);
        p.fc1_w = Tensor::uniform(&[flat, h], glorot_bound(flat, h), rng);
        p.fc2_w = Tensor::uniform(&[h, 1], glorot_bound(h, 1), rng);
        p
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> Result<CriticVars> {
        let v = self.leaves(g, trainable)?;
        Ok(self.vars_from(&v))
    }

    /// Handles from leaves registered in `named()` order.
    pub fn vars_from(&self, v: &[Var]) -> CriticVars {
        CriticVars {
            rows: self.rows,
            cols: self.cols,
            leak: self.config.leak,
            conv1_w: v[0],
            conv1_b: v[1],
            conv2_w: v[2],
            conv2_b: v[3],
            fc1_w: v[4],
            fc1_b: v[5],
            fc2_w: v[6],
            fc2_b: v[7],
        }
    }

    /// Clamps every entry into `[-c, c]`.
    pub fn clip(&mut self, c: f64) {
        for (_, t) in self.named_mut() {
            for v in t.data_mut() {
                *v = v.clamp(-c, c);
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.named().iter().fold(0.0, |m, (_, t)| m.max(t.max_abs()))
    }

    /// Score of a single `rows × cols` snippet.
    pub fn score(&self, snippet: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let s = g.constant(snippet.clone())?;
        let out = discriminate(&mut g, &vars, s)?;
        Ok(g.value(out).item())
    }
}

impl Parameters for CriticParams {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        alloc::vec![
            ("critic.conv1_w", &self.conv1_w),
            ("critic.conv1_b", &self.conv1_b),
            ("critic.conv2_w", &self.conv2_w),
            ("critic.conv2_b", &self.conv2_b),
            ("critic.fc1_w", &self.fc1_w),
            ("critic.fc1_b", &self.fc1_b),
            ("critic.fc2_w", &self.fc2_w),
            ("critic.fc2_b", &self.fc2_b),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        alloc::vec![
            ("critic.conv1_w", &mut self.conv1_w),
            ("critic.conv1_b", &mut self.conv1_b),
            ("critic.conv2_w", &mut self.conv2_w),
            ("critic.conv2_b", &mut self.conv2_b),
            ("critic.fc1_w", &mut self.fc1_w),
            ("critic.fc1_b", &mut self.fc1_b),
            ("critic.fc2_w", &mut self.fc2_w),
            ("critic.fc2_b", &mut self.fc2_b),
        ]
    }
}

/// Scores a batch of snippets.
///
/// `snippets` may be a single `rows × cols` matrix, a `batch × (rows·cols)`
/// matrix of flattened snippets, or `(batch, 1, rows, cols)`. Returns a
/// `batch × 1` column of unbounded scores.
pub fn discriminate(g: &mut Graph<'_>, critic: &CriticVars, snippets: Var) -> Result<Var> {
    let per = critic.rows * critic.cols;
    let shape = g.value(snippets).shape().to_vec();
    let batch = match shape.as_slice() {
        [r, c] if *r == critic.rows && *c == critic.cols => 1,
        [b, f] if *f == per => *b,
        [b, 1, r, c] if *r == critic.rows && *c == critic.cols => *b,
        _ => {
            return Err(Error::ShapeMismatch {
                op: "discriminate",
                lhs: shape,
                rhs: alloc::vec![critic.rows, critic.cols],
            })
        }
    };
    let x = g.reshape(snippets, &[batch, 1, critic.rows, critic.cols])?;
    let h = g.conv2d(x, critic.conv1_w, Some(critic.conv1_b))?;
    let h = g.leaky_relu(h, critic.leak)?;
    let h = g.conv2d(h, critic.conv2_w, Some(critic.conv2_b))?;
    let h = g.leaky_relu(h, critic.leak)?;
    let flat = g.value(h).len() / batch;
    let h = g.reshape(h, &[batch, flat])?;
    let h = g.matmul(h, critic.fc1_w)?;
    let h = g.add(h, critic.fc1_b)?;
    let h = g.leaky_relu(h, critic.leak)?;
    let s = g.matmul(h, critic.fc2_w)?;
    g.add(s, critic.fc2_b)
}

/// `−mean(real) + mean(fake)`, minimized by the critic.
pub fn critic_loss(g: &mut Graph<'_>, real_scores: Var, fake_scores: Var) -> Result<Var> {
    let r = g.mean_all(real_scores)?;
    let f = g.mean_all(fake_scores)?;
    g.sub(f, r)
}

/// `−mean(fake)`, minimized by the forecaster.
pub fn generator_adv_loss(g: &mut Graph<'_>, fake_scores: Var) -> Result<Var> {
    let f = g.mean_all(fake_scores)?;
    g.scale(f, -1.0)
}

fn mean(name: &str, xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument(format!("{name}: empty score list")));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Plain-value form of [`critic_loss`].
pub fn critic_loss_value(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    Ok(-mean("critic_loss", real_scores)? + mean("critic_loss", fake_scores)?)
}

/// Plain-value form of [`generator_adv_loss`].
pub fn generator_adv_loss_value(fake_scores: &[f64]) -> Result<f64> {
    Ok(-mean("generator_adv_loss", fake_scores)?)
}
