//! The recurrent forecaster: decayed local estimates, memory readout, input
//! fusion, LSTM recurrence and the autoregressive rollout past the history.
//!
//! At every step `t` the model first projects the previous hidden state to
//! the one-step estimate `x̃_t = h_{t−1} U + b`. It then averages four
//! `d`-wide vectors with a fixed denominator of 4 and feeds the result to the
//! LSTM: the forward estimate `z_t`, the backward estimate `z′_t`, `x̃_t` and
//! the projected memory readout. Components that are unavailable (backward statistics
//! past the history, the readout when memory is disabled) are zero vectors.
//!
//! Past the history every variable is unobserved: `δ` keeps counting and
//! the last observation and running mean stay frozen at their end-of-history
//! values, so `z_t` decays from the last observation toward the mean.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::data::{MaskedMatrix, MtsSample};
use crate::error::{Error, Result};
use crate::local_stats::{estimate_terms, EstimateTerms};
use crate::memory::{attend, build_query, project_readout, MemoryBank, MemoryVars};
use crate::params::{glorot_bound, Parameters};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of variables `d`.
    pub vars: usize,
    pub hidden: usize,
    pub memory_slots: usize,
    pub slot_dim: usize,
    /// When false the memory readout is replaced by zeros.
    pub use_memory: bool,
}

impl ModelConfig {
    pub fn new(vars: usize) -> Self {
        ModelConfig { vars, hidden: 32, memory_slots: 32, slot_dim: 128, use_memory: true }
    }
}

/// LSTM gate weights plus the output projection `x̃ = h U + b`.
///
/// The candidate cell has no bias term.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_o: Tensor,
    pub w_c: Tensor,
    pub u_i: Tensor,
    pub u_f: Tensor,
    pub u_o: Tensor,
    pub u_c: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl LstmParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        LstmParams {
            w_i: Tensor::zeros(&[d, h]),
            w_f: Tensor::zeros(&[d, h]),
            w_o: Tensor::zeros(&[d, h]),
            w_c: Tensor::zeros(&[d, h]),
            u_i: Tensor::zeros(&[h, h]),
            u_f: Tensor::zeros(&[h, h]),
            u_o: Tensor::zeros(&[h, h]),
            u_c: Tensor::zeros(&[h, h]),
            b_i: Tensor::zeros(&[1, h]),
            b_f: Tensor::zeros(&[1, h]),
            b_o: Tensor::zeros(&[1, h]),
            out_w: Tensor::zeros(&[h, d]),
            out_b: Tensor::zeros(&[1, d]),
        }
    }

    pub fn init<R: Rng + ?Sized>(d: usize, h: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d, h);
        let (bx, bh, bo) = (glorot_bound(d, h), glorot_bound(h, h), glorot_bound(h, d));
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_c] {
            *w = Tensor::uniform(&[d, h], bx, rng);
        }
        for u in [&mut p.u_i, &mut p.u_f, &mut p.u_o, &mut p.u_c] {
            *u = Tensor::uniform(&[h, h], bh, rng);
        }
        p.out_w = Tensor::uniform(&[h, d], bo, rng);
        p
    }

    pub fn hidden(&self) -> usize {
        self.u_i.shape()[0]
    }

    /// One recurrence step for a single series.
    pub fn step(&self, input: &[f64], state: &RecurrentState) -> Result<RecurrentState> {
        let mut g = Graph::new();
        let vars = LstmVars::bind(self, &mut g, false)?;
        let x = g.constant(Tensor::row_vector(input))?;
        let h = g.constant(Tensor::row_vector(&state.h))?;
        let c = g.constant(Tensor::row_vector(&state.c))?;
        let (h, c) = lstm_step(&mut g, &vars, x, h, c)?;
        Ok(RecurrentState { h: g.value(h).data().to_vec(), c: g.value(c).data().to_vec() })
    }

    /// `x̃ = h U + b` for a single hidden vector.
    pub fn project_output(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = LstmVars::bind(self, &mut g, false)?;
        let h = g.constant(Tensor::row_vector(h))?;
        let x = project_output(&mut g, &vars, h)?;
        Ok(g.value(x).data().to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(h: usize) -> Self {
        RecurrentState { h: vec![0.0; h], c: vec![0.0; h] }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    w_i: Var,
    w_f: Var,
    w_o: Var,
    w_c: Var,
    u_i: Var,
    u_f: Var,
    u_o: Var,
    u_c: Var,
    b_i: Var,
    b_f: Var,
    b_o: Var,
    out_w: Var,
    out_b: Var,
}

impl LstmVars {
    fn bind<'a>(p: &'a LstmParams, g: &mut Graph<'a>, trainable: bool) -> Result<Self> {
        let mut leaf = |t: &'a Tensor| g.leaf_ref(t, trainable);
        Ok(LstmVars {
            w_i: leaf(&p.w_i)?,
            w_f: leaf(&p.w_f)?,
            w_o: leaf(&p.w_o)?,
            w_c: leaf(&p.w_c)?,
            u_i: leaf(&p.u_i)?,
            u_f: leaf(&p.u_f)?,
            u_o: leaf(&p.u_o)?,
            u_c: leaf(&p.u_c)?,
            b_i: leaf(&p.b_i)?,
            b_f: leaf(&p.b_f)?,
            b_o: leaf(&p.b_o)?,
            out_w: leaf(&p.out_w)?,
            out_b: leaf(&p.out_b)?,
        })
    }
}

/// Per-variable decay parameters `(w, b)`, each `1 × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayParams {
    pub w: Tensor,
    pub b: Tensor,
}

/// Initial decay slope. A zero slope would sit every cell on the rectifier
/// hinge, where the subgradient is 0 and the decay could never learn.
pub const INITIAL_DECAY_SLOPE: f64 = 0.1;

impl DecayParams {
    pub fn new(d: usize) -> Self {
        DecayParams { w: Tensor::full(&[1, d], INITIAL_DECAY_SLOPE), b: Tensor::zeros(&[1, d]) }
    }
}

/// Every trainable tensor of the forecaster.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub lstm: LstmParams,
    pub decay_fwd: DecayParams,
    pub decay_bwd: DecayParams,
    pub memory: MemoryBank,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    use_memory: bool,
    lstm: LstmVars,
    decay_fwd: (Var, Var),
    decay_bwd: (Var, Var),
    memory: MemoryVars,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let d = config.vars;
        ModelParams {
            config,
            lstm: LstmParams::init(d, config.hidden, rng),
            decay_fwd: DecayParams::new(d),
            decay_bwd: DecayParams::new(d),
            memory: MemoryBank::init(config.memory_slots, config.slot_dim, d, rng),
        }
    }

    pub fn zeros(config: ModelConfig) -> Self {
        let d = config.vars;
        let zero_decay = DecayParams { w: Tensor::zeros(&[1, d]), b: Tensor::zeros(&[1, d]) };
        ModelParams {
            config,
            lstm: LstmParams::zeros(d, config.hidden),
            decay_fwd: zero_decay.clone(),
            decay_bwd: zero_decay,
            memory: MemoryBank::zeros(config.memory_slots, config.slot_dim, d),
        }
    }

    /// Registers every tensor in `named()` order.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> Result<(ModelVars, Vec<Var>)> {
        let v = self.leaves(g, trainable)?;
        Ok((self.vars_from(&v), v))
    }

    /// Handles from leaves registered in `named()` order.
    pub fn vars_from(&self, v: &[Var]) -> ModelVars {
        let lstm = LstmVars {
            w_i: v[0],
            w_f: v[1],
            w_o: v[2],
            w_c: v[3],
            u_i: v[4],
            u_f: v[5],
            u_o: v[6],
            u_c: v[7],
            b_i: v[8],
            b_f: v[9],
            b_o: v[10],
            out_w: v[11],
            out_b: v[12],
        };
        ModelVars {
            use_memory: self.config.use_memory,
            lstm,
            decay_fwd: (v[13], v[14]),
            decay_bwd: (v[15], v[16]),
            memory: MemoryVars { g: v[17], w_q: v[18], b_q: v[19], proj: v[20] },
        }
    }

    /// Point forecast of the `k` steps after the history.
    pub fn forecast(&self, sample: &MtsSample, k: usize) -> Result<Tensor> {
        if k == 0 {
            return Tensor::new(&[0, sample.d()], Vec::new());
        }
        let rows = self.rollout_single(&sample.history, k)?;
        stack_rows(&rows, sample.d())
    }

    /// The `k′` generated steps that follow a `k`-step forecast.
    pub fn generate_fake(&self, sample: &MtsSample, k: usize, k_prime: usize) -> Result<Tensor> {
        let rows = self.rollout_single(&sample.history, k + k_prime)?;
        stack_rows(&rows[k..], sample.d())
    }

    /// Encodes the history of `sample` alone.
    pub fn forward_encode(&self, sample: &MtsSample) -> Result<EncodedSeries> {
        let feats = BatchFeatures::new(&[&sample.history], 0)?;
        let mut g = Graph::new();
        let (vars, _) = self.bind(&mut g, false)?;
        let enc = forward_encode(&mut g, &vars, &feats)?;
        let rows = |vs: &[Var]| vs.iter().map(|v| g.value(*v).data().to_vec()).collect();
        Ok(EncodedSeries {
            state: RecurrentState {
                h: g.value(enc.h).data().to_vec(),
                c: g.value(enc.c).data().to_vec(),
            },
            estimates: rows(&enc.estimates),
            fused: rows(&enc.fused),
        })
    }

    fn rollout_single(&self, history: &MaskedMatrix, steps: usize) -> Result<Vec<Vec<f64>>> {
        let feats = BatchFeatures::new(&[history], steps)?;
        let mut g = Graph::new();
        let (vars, _) = self.bind(&mut g, false)?;
        let enc = forward_encode(&mut g, &vars, &feats)?;
        let out = extend(&mut g, &vars, &feats, &enc, steps)?;
        Ok(out.iter().map(|v| g.value(*v).data().to_vec()).collect())
    }
}

impl Parameters for ModelParams {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let l = &self.lstm;
        vec![
            ("lstm.w_i", &l.w_i),
            ("lstm.w_f", &l.w_f),
            ("lstm.w_o", &l.w_o),
            ("lstm.w_c", &l.w_c),
            ("lstm.u_i", &l.u_i),
            ("lstm.u_f", &l.u_f),
            ("lstm.u_o", &l.u_o),
            ("lstm.u_c", &l.u_c),
            ("lstm.b_i", &l.b_i),
            ("lstm.b_f", &l.b_f),
            ("lstm.b_o", &l.b_o),
            ("lstm.out_w", &l.out_w),
            ("lstm.out_b", &l.out_b),
            ("decay_fwd.w", &self.decay_fwd.w),
            ("decay_fwd.b", &self.decay_fwd.b),
            ("decay_bwd.w", &self.decay_bwd.w),
            ("decay_bwd.b", &self.decay_bwd.b),
            ("memory.g", &self.memory.g),
            ("memory.w_q", &self.memory.w_q),
            ("memory.b_q", &self.memory.b_q),
            ("memory.proj", &self.memory.proj),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let l = &mut self.lstm;
        vec![
            ("lstm.w_i", &mut l.w_i),
            ("lstm.w_f", &mut l.w_f),
            ("lstm.w_o", &mut l.w_o),
            ("lstm.w_c", &mut l.w_c),
            ("lstm.u_i", &mut l.u_i),
            ("lstm.u_f", &mut l.u_f),
            ("lstm.u_o", &mut l.u_o),
            ("lstm.u_c", &mut l.u_c),
            ("lstm.b_i", &mut l.b_i),
            ("lstm.b_f", &mut l.b_f),
            ("lstm.b_o", &mut l.b_o),
            ("lstm.out_w", &mut l.out_w),
            ("lstm.out_b", &mut l.out_b),
            ("decay_fwd.w", &mut self.decay_fwd.w),
            ("decay_fwd.b", &mut self.decay_fwd.b),
            ("decay_bwd.w", &mut self.decay_bwd.w),
            ("decay_bwd.b", &mut self.decay_bwd.b),
            ("memory.g", &mut self.memory.g),
            ("memory.w_q", &mut self.memory.w_q),
            ("memory.b_q", &mut self.memory.b_q),
            ("memory.proj", &mut self.memory.proj),
        ]
    }
}

/// Values of a single-series encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSeries {
    pub state: RecurrentState,
    /// `x̃_t` for every history step.
    pub estimates: Vec<Vec<f64>>,
    /// Fused LSTM input for every history step.
    pub fused: Vec<Vec<f64>>,
}

fn stack_rows(rows: &[Vec<f64>], d: usize) -> Result<Tensor> {
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::new(&[rows.len(), d], data)
}

/// Constant per-step inputs of the decayed local estimate, `batch × d` each.
#[derive(Clone, Debug)]
struct StepTerms {
    delta: Tensor,
    base: Tensor,
    spread: Tensor,
    /// All spreads zero: the estimate equals `base` whatever the decay.
    trivial: bool,
}

impl StepTerms {
    fn gather(per_series: &[Vec<EstimateTerms>], step: usize, d: usize) -> Result<Self> {
        let b = per_series.len();
        let mut delta = Vec::with_capacity(b * d);
        let mut base = Vec::with_capacity(b * d);
        let mut spread = Vec::with_capacity(b * d);
        for terms in per_series {
            for t in &terms[step * d..(step + 1) * d] {
                delta.push(t.delta);
                base.push(t.base);
                spread.push(t.spread);
            }
        }
        let trivial = spread.iter().all(|&s| s == 0.0);
        Ok(StepTerms {
            delta: Tensor::new(&[b, d], delta)?,
            base: Tensor::new(&[b, d], base)?,
            spread: Tensor::new(&[b, d], spread)?,
            trivial,
        })
    }
}

/// Parameter-free inputs for a batch of equally long histories, extended by
/// `extra` unobserved steps.
#[derive(Clone, Debug)]
pub struct BatchFeatures {
    batch: usize,
    d: usize,
    n: usize,
    extra: usize,
    fwd: Vec<StepTerms>,
    bwd: Vec<StepTerms>,
}

impl BatchFeatures {
    pub fn new(histories: &[&MaskedMatrix], extra: usize) -> Result<Self> {
        let first = histories
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (n, d) = (first.rows(), first.cols());
        if n == 0 || histories.iter().any(|h| h.rows() != n || h.cols() != d) {
            return Err(Error::Data("batch histories must share a nonzero n and d".into()));
        }
        let fwd_terms: Vec<Vec<EstimateTerms>> = histories.iter().map(|h| estimate_terms(h, extra)).collect();
        let bwd_terms: Vec<Vec<EstimateTerms>> = histories
            .iter()
            .map(|h| {
                let rev = estimate_terms(&h.reversed_rows(), 0);
                let mut out = Vec::with_capacity(rev.len());
                for i in (0..n).rev() {
                    out.extend_from_slice(&rev[i * d..(i + 1) * d]);
                }
                out
            })
            .collect();
        let fwd = (0..n + extra)
            .map(|t| StepTerms::gather(&fwd_terms, t, d))
            .collect::<Result<_>>()?;
        let bwd = (0..n).map(|t| StepTerms::gather(&bwd_terms, t, d)).collect::<Result<_>>()?;
        Ok(BatchFeatures { batch: histories.len(), d, n, extra, fwd, bwd })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Graph handles produced by encoding a batch of histories.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub h: Var,
    pub c: Var,
    /// `x̃_t` per history step, each `batch × d`.
    pub estimates: Vec<Var>,
    pub fused: Vec<Var>,
    decay_rows: (Var, Var),
    zeros_d: Var,
}

pub fn lstm_step(g: &mut Graph<'_>, l: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let gate = |g: &mut Graph<'_>, w: Var, u: Var, b: Option<Var>| -> Result<Var> {
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(h, u)?;
        let s = g.add(xw, hu)?;
        match b {
            Some(b) => g.add(s, b),
            None => Ok(s),
        }
    };
    let i = gate(g, l.w_i, l.u_i, Some(l.b_i))?;
    let f = gate(g, l.w_f, l.u_f, Some(l.b_f))?;
    let o = gate(g, l.w_o, l.u_o, Some(l.b_o))?;
    let cand = gate(g, l.w_c, l.u_c, None)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let o = g.sigmoid(o)?;
    let cand = g.tanh(cand)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.tanh(c_new)?;
    let h_new = g.mul(squashed, o)?;
    Ok((h_new, c_new))
}

pub fn project_output(g: &mut Graph<'_>, l: &LstmVars, h: Var) -> Result<Var> {
    let x = g.matmul(h, l.out_w)?;
    g.add(x, l.out_b)
}

/// Decayed local estimate `base + exp(−relu(w·δ + b)) ⊙ spread`.
fn local_estimate(g: &mut Graph<'_>, terms: &StepTerms, w_rows: Var, b: Var) -> Result<Var> {
    let base = g.constant(terms.base.clone())?;
    if terms.trivial {
        return Ok(base);
    }
    let delta = g.constant(terms.delta.clone())?;
    let wd = g.mul(delta, w_rows)?;
    let inner = g.add(wd, b)?;
    let r = g.relu(inner)?;
    let neg = g.scale(r, -1.0)?;
    let gamma = g.exp(neg)?;
    let spread = g.constant(terms.spread.clone())?;
    let pull = g.mul(gamma, spread)?;
    g.add(base, pull)
}

/// Averages the four `d`-wide components with a fixed denominator of 4.
pub fn fuse(g: &mut Graph<'_>, z: Var, z_back: Var, x_tilde: Var, readout: Var) -> Result<Var> {
    let s = g.add(z, z_back)?;
    let s = g.add(s, x_tilde)?;
    let s = g.add(s, readout)?;
    g.scale(s, 0.25)
}

/// Plain form of [`fuse`]; `None` marks an unavailable component.
pub fn fuse_inputs(
    z: Option<&[f64]>,
    z_back: Option<&[f64]>,
    x_tilde: Option<&[f64]>,
    readout: Option<&[f64]>,
    d: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for part in [z, z_back, x_tilde, readout].into_iter().flatten() {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v *= 0.25);
    out
}

fn memory_readout(g: &mut Graph<'_>, vars: &ModelVars, z: Var, z_back: Var, x_tilde: Var, zeros_d: Var) -> Result<Var> {
    if !vars.use_memory {
        return Ok(zeros_d);
    }
    let q = build_query(g, &vars.memory, z, z_back, x_tilde)?;
    let (_, a) = attend(g, &vars.memory, q)?;
    project_readout(g, &vars.memory, a)
}

/// Runs the recurrence over every history step of the batch.
pub fn forward_encode(g: &mut Graph<'_>, vars: &ModelVars, feats: &BatchFeatures) -> Result<Encoded> {
    let (b, d) = (feats.batch, feats.d);
    let hidden = g.value(vars.lstm.u_i).shape()[0];
    let ones = g.constant(Tensor::full(&[b, 1], 1.0))?;
    let wf = g.matmul(ones, vars.decay_fwd.0)?;
    let wb = g.matmul(ones, vars.decay_bwd.0)?;
    let zeros_d = g.constant(Tensor::zeros(&[b, d]))?;
    let mut h = g.constant(Tensor::zeros(&[b, hidden]))?;
    let mut c = h;
    let mut estimates = Vec::with_capacity(feats.n);
    let mut fused = Vec::with_capacity(feats.n);
    for t in 0..feats.n {
        let x_tilde = project_output(g, &vars.lstm, h)?;
        let z = local_estimate(g, &feats.fwd[t], wf, vars.decay_fwd.1)?;
        let zb = local_estimate(g, &feats.bwd[t], wb, vars.decay_bwd.1)?;
        let a = memory_readout(g, vars, z, zb, x_tilde, zeros_d)?;
        let input = fuse(g, z, zb, x_tilde, a)?;
        (h, c) = lstm_step(g, &vars.lstm, input, h, c)?;
        estimates.push(x_tilde);
        fused.push(input);
    }
    Ok(Encoded { h, c, estimates, fused, decay_rows: (wf, wb), zeros_d })
}

/// Continues an encoding for `steps` autoregressive steps and returns the
/// `steps` projected estimates `x̃_{n+1} … x̃_{n+steps}`.
pub fn extend(g: &mut Graph<'_>, vars: &ModelVars, feats: &BatchFeatures, enc: &Encoded, steps: usize) -> Result<Vec<Var>> {
    if steps > feats.extra {
        return Err(Error::InvalidArgument(alloc::format!(
            "features cover {} future steps, {steps} requested",
            feats.extra
        )));
    }
    let (mut h, mut c) = (enc.h, enc.c);
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        let x_tilde = project_output(g, &vars.lstm, h)?;
        out.push(x_tilde);
        if s + 1 == steps {
            break;
        }
        let z = local_estimate(g, &feats.fwd[feats.n + s], enc.decay_rows.0, vars.decay_fwd.1)?;
        let a = memory_readout(g, vars, z, enc.zeros_d, x_tilde, enc.zeros_d)?;
        let input = fuse(g, z, enc.zeros_d, x_tilde, a)?;
        (h, c) = lstm_step(g, &vars.lstm, input, h, c)?;
    }
    Ok(out)
}

/// Forecasts for many samples, `chunk` histories per graph.
pub fn predict(params: &ModelParams, samples: &[MtsSample], k: usize, chunk: usize) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(samples.len());
    for group in samples.chunks(chunk.max(1)) {
        let hist: Vec<&MaskedMatrix> = group.iter().map(|s| &s.history).collect();
        let feats = BatchFeatures::new(&hist, k)?;
        let mut g = Graph::new();
        let (vars, _) = params.bind(&mut g, false)?;
        let enc = forward_encode(&mut g, &vars, &feats)?;
        let steps = extend(&mut g, &vars, &feats, &enc, k)?;
        for (bi, s) in group.iter().enumerate() {
            let mut data = Vec::with_capacity(k * s.d());
            for v in &steps {
                data.extend_from_slice(g.value(*v).row(bi));
            }
            out.push(Tensor::new(&[k, s.d()], data)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, d: usize, k: usize, rng: &mut ChaCha8Rng, p_missing: f64) -> MtsSample {
        let cells: Vec<Option<f64>> = (0..n * d)
            .map(|_| {
                let v: f64 = rng.gen_range(-1.0..1.0);
                (rng.gen::<f64>() >= p_missing).then_some(v)
            })
            .collect();
        let h = MaskedMatrix::from_cells(n, d, &cells).unwrap();
        let t = MaskedMatrix::fully_observed(k, d, vec![0.5; k * d]).unwrap();
        MtsSample::new(h, t).unwrap()
    }

    #[test]
    fn lstm_zero_params() {
        let p = LstmParams::zeros(2, 3);
        let s = p.step(&[1.0, -4.0], &RecurrentState::zeros(3)).unwrap();
        assert_eq!(s, RecurrentState::zeros(3));
        let p1 = LstmParams::zeros(1, 1);
        let s = p1.step(&[0.0], &RecurrentState { h: vec![0.0], c: vec![2.0] }).unwrap();
        assert_eq!(s.c, vec![1.0]);
        assert!((s.h[0] - 0.380797077977882444).abs() < 1e-15);
    }

    #[test]
    fn lstm_ignores_input_when_input_weights_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = LstmParams::init(2, 4, &mut rng);
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_c] {
            *w = Tensor::zeros(&[2, 4]);
        }
        let st = RecurrentState { h: vec![0.1, -0.2, 0.3, 0.4], c: vec![0.5; 4] };
        assert_eq!(p.step(&[0.0, 0.0], &st).unwrap(), p.step(&[3.0, -7.0], &st).unwrap());
    }

    #[test]
    fn output_projection() {
        let mut p = LstmParams::zeros(2, 3);
        p.out_b = Tensor::row_vector(&[0.5, -1.5]);
        assert_eq!(p.project_output(&[4.0, 5.0, 6.0]).unwrap(), vec![0.5, -1.5]);
        p.out_w = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(p.project_output(&[0.0; 3]).unwrap(), vec![0.5, -1.5]);
        assert_eq!(p.project_output(&[1.0, 0.0, 0.0]).unwrap(), vec![1.5, 0.5]);
    }

    #[test]
    fn fusion_is_a_fixed_quarter_average() {
        let v = [2.0, -4.0];
        assert_eq!(fuse_inputs(Some(&v), Some(&v), Some(&v), Some(&v), 2), vec![2.0, -4.0]);
        assert_eq!(fuse_inputs(Some(&v), None, None, None, 2), vec![0.5, -1.0]);
        assert_eq!(fuse_inputs(None, None, None, None, 2), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_parameters_cascade_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample(5, 3, 2, &mut rng, 0.3);
        let p = ModelParams::zeros(ModelConfig { vars: 3, hidden: 4, memory_slots: 3, slot_dim: 5, use_memory: true });
        let enc = p.forward_encode(&s).unwrap();
        assert_eq!(enc.state, RecurrentState::zeros(4));
        assert!(enc.estimates.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(p.forecast(&s, 2).unwrap(), Tensor::zeros(&[2, 3]));
        assert_eq!(p.generate_fake(&s, 2, 3).unwrap(), Tensor::zeros(&[3, 3]));
        assert_eq!(p.forecast(&s, 0).unwrap().shape(), &[0, 3]);
    }

    #[test]
    fn single_observed_step_fuses_observation_twice() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ModelConfig { vars: 2, hidden: 3, memory_slots: 4, slot_dim: 5, use_memory: true };
        let p = ModelParams::init(cfg, &mut rng);
        let h = MaskedMatrix::fully_observed(1, 2, vec![0.7, -1.2]).unwrap();
        let s = MtsSample::new(h, MaskedMatrix::fully_observed(1, 2, vec![0.0, 0.0]).unwrap()).unwrap();
        let enc = p.forward_encode(&s).unwrap();
        let x_tilde = p.lstm.project_output(&[0.0; 3]).unwrap();
        let q = p.memory.query(&[0.7, -1.2], &[0.7, -1.2], &x_tilde).unwrap();
        let (_, a) = p.memory.attend(&q).unwrap();
        let a_proj: Vec<f64> = (0..2).map(|j| (0..5).map(|l| a[l] * p.memory.proj.get(l, j)).sum()).collect();
        let expect = fuse_inputs(Some(&[0.7, -1.2]), Some(&[0.7, -1.2]), Some(&x_tilde), Some(&a_proj), 2);
        for (x, y) in enc.fused[0].iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn deterministic_and_split_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sample(6, 2, 3, &mut rng, 0.4);
        let p = ModelParams::init(ModelConfig::new(2), &mut rng);
        let a = p.forecast(&s, 3).unwrap();
        assert_eq!(a, p.forecast(&s, 3).unwrap());
        let fake = p.generate_fake(&s, 3, 2).unwrap();
        let long = p.forecast(&s, 5).unwrap();
        assert_eq!(&long.data()[..6], a.data());
        assert_eq!(&long.data()[6..], fake.data());
        let one = p.generate_fake(&s, 3, 1).unwrap();
        assert_eq!(one.shape(), &[1, 2]);
        assert_eq!(one.data(), &long.data()[6..8]);
    }

    #[test]
    fn batched_prediction_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<MtsSample> = (0..5).map(|_| sample(4, 3, 2, &mut rng, 0.5)).collect();
        let p = ModelParams::init(ModelConfig { vars: 3, hidden: 6, memory_slots: 4, slot_dim: 8, use_memory: true }, &mut rng);
        let batched = predict(&p, &samples, 2, 3).unwrap();
        for (s, b) in samples.iter().zip(&batched) {
            let single = p.forecast(s, 2).unwrap();
            for (x, y) in single.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }
}
