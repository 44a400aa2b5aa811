//! Per-variable local statistics of a masked series.
//!
//! For every cell `(i, j)`:
//! - `delta` counts the steps since variable `j` was last observed;
//! - `emp_mean` is the mean of the observations strictly before `i`;
//! - `last_obs` is the most recent observation strictly before `i`;
//! - `gamma = exp(-max(0, w_j · delta + b_j))` weighs `last_obs` against
//!   `emp_mean` for a missing cell.
//!
//! Empty prefixes give a mean and last observation of 0, the mean of a
//! z-scored variable. Backward statistics run the same recipe on the
//! time-reversed series and reverse the result back.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::MaskedMatrix;
use crate::tensor::Tensor;

/// Local statistics for one `n × d` series under fixed decay parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStats {
    pub delta: Vec<u32>,
    pub gamma: Tensor,
    pub emp_mean: Tensor,
    pub last_obs: Tensor,
    pub z: Tensor,
}

impl LocalStats {
    pub fn compute(x: &MaskedMatrix, w: &[f64], b: &[f64]) -> Self {
        let delta = compute_delta(x);
        let gamma = compute_decay(&delta, x.cols(), w, b);
        let emp_mean = compute_empirical_mean(x);
        let last_obs = compute_last_observation(x);
        let z = compute_local_estimate(x, &gamma, &last_obs, &emp_mean);
        LocalStats { delta, gamma, emp_mean, last_obs, z }
    }
}

/// Steps since the last observation; 0 on observed cells and on the first row.
pub fn compute_delta(x: &MaskedMatrix) -> Vec<u32> {
    let (n, d) = (x.rows(), x.cols());
    let mut delta = vec![0u32; n * d];
    for i in 1..n {
        for j in 0..d {
            if !x.observed(i, j) {
                delta[i * d + j] = delta[(i - 1) * d + j] + 1;
            }
        }
    }
    delta
}

/// Running mean of the observed prefix `0..i` (exclusive of `i`).
pub fn compute_empirical_mean(x: &MaskedMatrix) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[n, d]);
    let mut sum = vec![0.0; d];
    let mut count = vec![0usize; d];
    let data = out.data_mut();
    for i in 0..n {
        for j in 0..d {
            if count[j] > 0 {
                data[i * d + j] = sum[j] / count[j] as f64;
            }
            if let Some(v) = x.get(i, j) {
                sum[j] += v;
                count[j] += 1;
            }
        }
    }
    out
}

/// Most recent observation strictly before row `i`, or 0 if there is none.
pub fn compute_last_observation(x: &MaskedMatrix) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[n, d]);
    let mut last = vec![0.0; d];
    let data = out.data_mut();
    for i in 0..n {
        for j in 0..d {
            data[i * d + j] = last[j];
            if let Some(v) = x.get(i, j) {
                last[j] = v;
            }
        }
    }
    out
}

pub fn decay(delta: f64, w: f64, b: f64) -> f64 {
    libm::exp(-f64::max(0.0, w * delta + b))
}

/// `gamma[i][j] = exp(-max(0, w[j] · delta[i][j] + b[j]))`.
pub fn compute_decay(delta: &[u32], d: usize, w: &[f64], b: &[f64]) -> Tensor {
    assert!(w.len() == d && b.len() == d, "one decay parameter pair per variable");
    let data = delta
        .iter()
        .enumerate()
        .map(|(idx, &dl)| decay(dl as f64, w[idx % d], b[idx % d]))
        .collect();
    Tensor::new(&[delta.len() / d.max(1), d], data).expect("delta is n x d")
}

/// `z = m·x + (1 − m)·(gamma·last_obs + (1 − gamma)·emp_mean)`.
pub fn compute_local_estimate(x: &MaskedMatrix, gamma: &Tensor, last_obs: &Tensor, emp_mean: &Tensor) -> Tensor {
    let data = (0..x.rows() * x.cols())
        .map(|idx| {
            if x.mask()[idx] {
                x.values()[idx]
            } else {
                let g = gamma.data()[idx];
                g * last_obs.data()[idx] + (1.0 - g) * emp_mean.data()[idx]
            }
        })
        .collect();
    Tensor::new(&[x.rows(), x.cols()], data).expect("n x d")
}

/// Backward local estimate `z′`, summarizing rows after `i` for missing cells.
pub fn compute_backward_stats(x: &MaskedMatrix, w: &[f64], b: &[f64]) -> Tensor {
    let rev = LocalStats::compute(&x.reversed_rows(), w, b).z;
    let d = x.cols();
    let mut data = Vec::with_capacity(rev.len());
    for i in (0..x.rows()).rev() {
        data.extend_from_slice(&rev.data()[i * d..(i + 1) * d]);
    }
    Tensor::new(&[x.rows(), d], data).expect("n x d")
}

/// Parameter-free parts of the local estimate at one step, split so that
/// `z = base + gamma ⊙ spread` with
/// `base = m·x + (1 − m)·emp_mean` and `spread = (1 − m)·(last_obs − emp_mean)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateTerms {
    pub delta: f64,
    pub base: f64,
    pub spread: f64,
}

/// [`EstimateTerms`] for every cell of `x` extended by `extra` unobserved rows.
///
/// The extra rows continue the delta recurrence and carry the last
/// observation and running mean of the full series forward.
pub fn estimate_terms(x: &MaskedMatrix, extra: usize) -> Vec<EstimateTerms> {
    let (n, d) = (x.rows(), x.cols());
    let delta = compute_delta(x);
    let mean = compute_empirical_mean(x);
    let last = compute_last_observation(x);
    let mut out = Vec::with_capacity((n + extra) * d);
    for idx in 0..n * d {
        let (m, xv) = (x.mask()[idx], x.values()[idx]);
        let (mu, lo) = (mean.data()[idx], last.data()[idx]);
        out.push(if m {
            EstimateTerms { delta: delta[idx] as f64, base: xv, spread: 0.0 }
        } else {
            EstimateTerms { delta: delta[idx] as f64, base: mu, spread: lo - mu }
        });
    }
    if extra > 0 {
        // Statistics one step past the history, then frozen.
        let mut sum = vec![0.0; d];
        let mut count = vec![0usize; d];
        let mut last_seen = vec![0.0; d];
        let mut since = vec![0u32; d];
        for i in 0..n {
            for j in 0..d {
                if let Some(v) = x.get(i, j) {
                    sum[j] += v;
                    count[j] += 1;
                    last_seen[j] = v;
                    since[j] = 0;
                } else if i > 0 {
                    since[j] += 1;
                }
            }
        }
        for step in 1..=extra {
            for j in 0..d {
                let mu = if count[j] > 0 { sum[j] / count[j] as f64 } else { 0.0 };
                out.push(EstimateTerms {
                    delta: (since[j] as usize + step) as f64,
                    base: mu,
                    spread: last_seen[j] - mu,
                });
            }
        }
    }
    out
}
