//! Alternating critic / forecaster optimization.
//!
//! Every mini-batch first runs `critic_steps` updates of the critic (each
//! followed by weight clipping), then one update of the forecaster on
//! `L_p + λ·L_a`. With `λ = 0` the critic is never created.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::critic::{critic_loss, discriminate, generator_adv_loss, CriticConfig, CriticParams, CriticVars};
use crate::data::{MtsSample, SnippetSet};
use crate::error::{Error, Result};
use crate::forecaster::{extend, forward_encode, predict, BatchFeatures, ModelConfig, ModelParams, ModelVars};
use crate::metrics::MetricsReport;
use crate::params::Parameters;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub k_prime: usize,
    pub lambda: f64,
    pub memory_slots: usize,
    pub slot_dim: usize,
    pub hidden: usize,
    pub use_memory: bool,
    pub learning_rate: f64,
    /// Step size of the critic. Clipped weights shrink its gradients by
    /// roughly `clip_c` per layer, so it needs a larger step than the
    /// forecaster to move at all.
    pub critic_learning_rate: f64,
    pub clip_c: f64,
    pub critic_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm bound for forecaster updates; 0 disables it.
    pub grad_clip: f64,
    pub critic: CriticConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 3,
            k_prime: 3,
            lambda: 0.1,
            memory_slots: 32,
            slot_dim: 128,
            hidden: 32,
            use_memory: true,
            learning_rate: 1e-2,
            critic_learning_rate: 0.1,
            clip_c: 0.01,
            critic_steps: 5,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            grad_clip: 5.0,
            critic: CriticConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(1..=5).contains(&self.k_prime) {
            return bad("k_prime must be in 1..=5");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.critic_learning_rate > 0.0) || !self.critic_learning_rate.is_finite() {
            return bad("critic_learning_rate must be positive");
        }
        if !(self.clip_c > 0.0) {
            return bad("clip_c must be positive");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.memory_slots == 0 || self.slot_dim == 0 {
            return bad("batch_size, hidden, memory_slots and slot_dim must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        Ok(())
    }

    pub fn model_config(&self, vars: usize) -> ModelConfig {
        ModelConfig {
            vars,
            hidden: self.hidden,
            memory_slots: self.memory_slots,
            slot_dim: self.slot_dim,
            use_memory: self.use_memory,
        }
    }

    fn adversarial(&self) -> bool {
        self.lambda > 0.0
    }
}

/// Separate generator streams so that, e.g., changing the number of critic
/// steps does not change the parameter initialization.
#[derive(Clone, Copy)]
enum Stream {
    ModelInit = 1,
    CriticInit = 2,
    Shuffle = 3,
    Snippets = 4,
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    rng_for(seed, s as u64)
}

/// Per-sample masked mean squared error, averaged over the batch.
///
/// All three tensors are `batch × cells`; `mask` holds 1 for observed and 0
/// for missing cells. Predictions are multiplied by the mask before the
/// difference, so masked cells contribute exact zeros to value and gradient.
pub fn masked_mse(g: &mut Graph<'_>, pred: Var, truth: &Tensor, mask: &Tensor) -> Result<Var> {
    let shape = g.value(pred).shape().to_vec();
    if truth.shape() != shape.as_slice() || mask.shape() != shape.as_slice() || shape.len() != 2 {
        return Err(Error::ShapeMismatch { op: "masked_mse", lhs: shape, rhs: truth.shape().to_vec() });
    }
    let weights = mse_weights(mask);
    let target: Vec<f64> = truth.data().iter().zip(mask.data()).map(|(t, m)| t * m).collect();
    let m = g.constant(mask.clone())?;
    let t = g.constant(Tensor::new(&shape, target)?)?;
    let w = g.constant(weights)?;
    let p = g.mul(pred, m)?;
    let diff = g.sub(p, t)?;
    let sq = g.mul(diff, diff)?;
    let weighted = g.mul(sq, w)?;
    g.sum_all(weighted)
}

/// `1 / (batch · max(1, observed_b))` on every cell of row `b`.
fn mse_weights(mask: &Tensor) -> Tensor {
    let (rows, cols) = (mask.rows(), mask.cols());
    let mut w = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let count = mask.row(r).iter().filter(|&&m| m != 0.0).count().max(1);
        let v = 1.0 / (rows as f64 * count as f64);
        w.extend(core::iter::repeat(v).take(cols));
    }
    Tensor::new(mask.shape(), w).expect("same shape as mask")
}

/// Plain-value form of [`masked_mse`].
pub fn masked_mse_value(pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone())?;
    let l = masked_mse(&mut g, p, truth, mask)?;
    Ok(g.value(l).item())
}

/// `L_p + λ·L_a`.
pub fn total_objective(forecast_loss: f64, adv_loss: f64, lambda: f64) -> f64 {
    forecast_loss + lambda * adv_loss
}

/// `p ← p − lr·g` for every tensor of `params`, in `named()` order.
pub fn sgd_step<P: Parameters + ?Sized>(params: &mut P, grads: &[Tensor], lr: f64) -> Result<()> {
    let mut targets = params.named_mut();
    if targets.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            targets.len()
        )));
    }
    for ((name, p), g) in targets.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::InvalidArgument(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    for ((_, p), g) in targets.iter_mut().zip(grads) {
        for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * d;
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().map(Tensor::sum_squares).sum::<f64>());
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Inputs of one mini-batch, laid out as `batch × (steps · d)` rows.
pub struct Batch {
    pub features: BatchFeatures,
    pub truth: Tensor,
    pub mask: Tensor,
    pub k: usize,
    pub extra: usize,
}

impl Batch {
    /// `extra` is the number of rollout steps past the history (`k`, or
    /// `k + k′` when fake snippets are needed).
    pub fn new(samples: &[&MtsSample], extra: usize) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (k, d) = (first.k(), first.d());
        if extra < k {
            return Err(Error::InvalidArgument("rollout shorter than the horizon".into()));
        }
        let hist: Vec<_> = samples.iter().map(|s| &s.history).collect();
        let features = BatchFeatures::new(&hist, extra)?;
        let mut truth = Vec::with_capacity(samples.len() * k * d);
        let mut mask = Vec::with_capacity(samples.len() * k * d);
        for s in samples {
            if s.k() != k {
                return Err(Error::Data("batch samples must share k".into()));
            }
            truth.extend_from_slice(s.target.values());
            mask.extend(s.target.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }));
        }
        let shape = [samples.len(), k * d];
        Ok(Batch { features, truth: Tensor::new(&shape, truth)?, mask: Tensor::new(&shape, mask)?, k, extra })
    }
}

/// Graph handles of a rolled-out batch.
pub struct Rollout {
    /// `batch × (k · d)` forecast.
    pub forecast: Var,
    /// `batch × ((extra − k) · d)` generated continuation, if any.
    pub fake: Option<Var>,
}

pub fn rollout(g: &mut Graph<'_>, vars: &ModelVars, batch: &Batch) -> Result<Rollout> {
    let enc = forward_encode(g, vars, &batch.features)?;
    let steps = extend(g, vars, &batch.features, &enc, batch.extra)?;
    let forecast = g.concat_cols(&steps[..batch.k])?;
    let fake = if batch.extra > batch.k { Some(g.concat_cols(&steps[batch.k..])?) } else { None };
    Ok(Rollout { forecast, fake })
}

/// Loss terms of the forecaster update.
pub struct Objective {
    pub total: Var,
    pub forecast: Var,
    pub adversarial: Option<Var>,
}

/// `L_p + λ·L_a`, with the adversarial term only when a critic is given.
pub fn generator_objective(
    g: &mut Graph<'_>,
    model: &ModelVars,
    critic: Option<&CriticVars>,
    batch: &Batch,
    lambda: f64,
) -> Result<Objective> {
    let r = rollout(g, model, batch)?;
    let lp = masked_mse(g, r.forecast, &batch.truth, &batch.mask)?;
    match (critic, r.fake) {
        (Some(c), Some(fake)) if lambda > 0.0 => {
            let scores = discriminate(g, c, fake)?;
            let la = generator_adv_loss(g, scores)?;
            let weighted = g.scale(la, lambda)?;
            let total = g.add(lp, weighted)?;
            Ok(Objective { total, forecast: lp, adversarial: Some(la) })
        }
        _ => Ok(Objective { total: lp, forecast: lp, adversarial: None }),
    }
}

/// The saddle objective `L_p + λ·(mean D(real) − mean D(fake))`: the
/// forecaster descends it and the critic ascends it. Its gradient is the
/// generator gradient for θ and `−λ` times the critic-loss gradient for θ_D.
pub fn minimax_objective(
    g: &mut Graph<'_>,
    model: &ModelVars,
    critic: &CriticVars,
    batch: &Batch,
    real: &Tensor,
    lambda: f64,
) -> Result<Var> {
    let r = rollout(g, model, batch)?;
    let fake = r.fake.ok_or_else(|| Error::InvalidArgument("batch has no generated steps".into()))?;
    let lp = masked_mse(g, r.forecast, &batch.truth, &batch.mask)?;
    let real = g.constant(real.clone())?;
    let sr = discriminate(g, critic, real)?;
    let sf = discriminate(g, critic, fake)?;
    let ld = critic_loss(g, sr, sf)?;
    let adv = g.scale(ld, -lambda)?;
    g.add(lp, adv)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub forecast_loss: f64,
    pub adversarial_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub val_rmse: Option<f64>,
    pub val_mae: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation RMSE (the last epoch's when
    /// there is no validation set).
    pub params: ModelParams,
    /// Critic state saved together with `params`; `None` when `λ = 0`.
    pub critic: Option<CriticParams>,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Forecaster parameters before the first update. They depend only on the
/// seed and the model widths, so ablation variants start from the same point.
pub fn initial_model(config: &TrainConfig, d: usize) -> ModelParams {
    ModelParams::init(config.model_config(d), &mut stream(config.seed, Stream::ModelInit))
}

/// Critic parameters before the first update, already clipped.
pub fn initial_critic(config: &TrainConfig, d: usize) -> CriticParams {
    let mut c = CriticParams::init(config.k_prime, d, config.critic, &mut stream(config.seed, Stream::CriticInit));
    c.clip(config.clip_c);
    c
}

/// Forecasts for `samples` in evaluation-sized chunks.
pub fn evaluate(params: &ModelParams, samples: &[MtsSample]) -> Result<(Vec<Tensor>, MetricsReport)> {
    let k = samples.first().map_or(0, MtsSample::k);
    let preds = predict(params, samples, k, 256)?;
    let report = MetricsReport::compute(&preds, samples, None)?;
    Ok((preds, report))
}

/// Full training loop. `observer` sees every epoch record as it is produced.
pub fn train(
    train_set: &[MtsSample],
    val_set: &[MtsSample],
    snippets: &SnippetSet,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = train_set.first().ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
    let (d, k) = (first.d(), first.k());
    if k != config.k {
        return Err(Error::InvalidArgument(format!("samples have k = {k}, config has k = {}", config.k)));
    }
    let adversarial = config.adversarial();
    if adversarial && snippets.is_empty() {
        return Err(Error::InvalidArgument("lambda > 0 needs a non-empty real snippet set".into()));
    }
    if adversarial && (snippets.rows != config.k_prime || snippets.snippets[0].cols() != d) {
        return Err(Error::InvalidArgument(format!(
            "real snippets are {}x{}, expected {}x{d}",
            snippets.rows,
            snippets.snippets[0].cols(),
            config.k_prime
        )));
    }
    let mut params = initial_model(config, d);
    let mut critic = adversarial.then(|| initial_critic(config, d));
    let mut shuffle_rng = stream(config.seed, Stream::Shuffle);
    let mut snippet_rng = stream(config.seed, Stream::Snippets);
    let extra = if adversarial { config.k + config.k_prime } else { config.k };

    let mut best: Option<(f64, usize, ModelParams, Option<CriticParams>)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut lp_sum, mut la_sum, mut ld_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&MtsSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::new(&samples, extra)?;
            if let Some(c) = critic.as_mut() {
                ld_sum += critic_phase(&params, c, &batch, snippets, config, &mut snippet_rng)?;
            }
            let (lp, la) = generator_phase(&mut params, critic.as_ref(), &batch, config)?;
            lp_sum += lp;
            la_sum += la.unwrap_or(0.0);
            batches += 1;
        }
        let nb = batches as f64;
        let val = if val_set.is_empty() { None } else { Some(evaluate(&params, val_set)?.1) };
        let record = EpochRecord {
            epoch,
            forecast_loss: lp_sum / nb,
            adversarial_loss: adversarial.then(|| la_sum / nb),
            critic_loss: adversarial.then(|| ld_sum / nb),
            val_rmse: val.as_ref().map(|r| r.rmse),
            val_mae: val.as_ref().map(|r| r.mae),
        };
        observer(&record);
        let score = record.val_rmse.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(b, ..)| score < *b || record.val_rmse.is_none()) {
            best = Some((score, epoch, params.clone(), critic.clone()));
        }
        log.push(record);
    }
    let (params, critic, best_epoch) = match best {
        Some((_, e, p, c)) => (p, c, e),
        None => (params, critic, 0),
    };
    Ok(TrainOutcome { params, critic, best_epoch, log })
}

/// Runs the critic updates of one batch and returns their mean loss.
fn critic_phase(
    params: &ModelParams,
    critic: &mut CriticParams,
    batch: &Batch,
    snippets: &SnippetSet,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    // The forecaster is fixed during these updates, so the fakes are too.
    let fake = {
        let mut g = Graph::new();
        let (vars, _) = params.bind(&mut g, false)?;
        let r = rollout(&mut g, &vars, batch)?;
        g.value(r.fake.expect("adversarial batches roll out past k")).clone()
    };
    let b = fake.rows();
    let width = fake.cols();
    let mut total = 0.0;
    for _ in 0..config.critic_steps {
        let mut real = Vec::with_capacity(b * width);
        for _ in 0..b {
            let s = &snippets.snippets[rng.gen_range(0..snippets.len())];
            real.extend_from_slice(s.data());
        }
        let real = Tensor::new(&[b, width], real)?;
        total += critic_step(critic, &real, &fake, config.critic_learning_rate, config.clip_c)?;
    }
    Ok(if config.critic_steps > 0 { total / config.critic_steps as f64 } else { 0.0 })
}

/// One SGD update of the critic on a batch of real and fake snippets
/// (`batch × (rows·cols)` each), followed by clipping. Returns the loss
/// before the update.
pub fn critic_step(critic: &mut CriticParams, real: &Tensor, fake: &Tensor, lr: f64, clip_c: f64) -> Result<f64> {
    let (loss, grads) = {
        let mut g = Graph::new();
        let leaves = critic.leaves(&mut g, true)?;
        let cv = critic.vars_from(&leaves);
        let r = g.constant_ref(real)?;
        let f = g.constant_ref(fake)?;
        let sr = discriminate(&mut g, &cv, r)?;
        let sf = discriminate(&mut g, &cv, f)?;
        let l = critic_loss(&mut g, sr, sf)?;
        let mut grads = g.backward(l)?;
        let gs: Vec<Tensor> = leaves.iter().map(|v| grads.take(*v).expect("critic leaf")).collect();
        (g.value(l).item(), gs)
    };
    sgd_step(critic, &grads, lr)?;
    critic.clip(clip_c);
    Ok(loss)
}

/// One forecaster update; returns `(L_p, L_a)`.
fn generator_phase(
    params: &mut ModelParams,
    critic: Option<&CriticParams>,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<(f64, Option<f64>)> {
    let (lp, la, mut grads) = {
        let mut g = Graph::new();
        let (vars, leaves) = params.bind(&mut g, true)?;
        let cv = match critic {
            Some(c) => Some(c.bind(&mut g, false)?),
            None => None,
        };
        let obj = generator_objective(&mut g, &vars, cv.as_ref(), batch, config.lambda)?;
        let mut grads = g.backward(obj.total)?;
        let gs: Vec<Tensor> = leaves.iter().map(|v| grads.take(*v).expect("model leaf")).collect();
        (g.value(obj.forecast).item(), obj.adversarial.map(|v| g.value(v).item()), gs)
    };
    clip_global_norm(&mut grads, config.grad_clip);
    sgd_step(params, &grads, config.learning_rate)?;
    Ok((lp, la))
}

/// Gradients of the forecaster objective for one batch, in `named()` order.
pub fn generator_gradients(
    params: &ModelParams,
    critic: Option<&CriticParams>,
    batch: &Batch,
    lambda: f64,
) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let (vars, leaves) = params.bind(&mut g, true)?;
    let cv = match critic {
        Some(c) => Some(c.bind(&mut g, false)?),
        None => None,
    };
    let obj = generator_objective(&mut g, &vars, cv.as_ref(), batch, lambda)?;
    let mut grads = g.backward(obj.total)?;
    Ok(leaves.iter().map(|v| grads.take(*v).expect("model leaf")).collect())
}
