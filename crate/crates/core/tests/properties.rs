//! Randomized invariants of the engine.

use lgnet_core::critic::{critic_loss_value, generator_adv_loss_value, CriticConfig, CriticParams};
use lgnet_core::data::{normalize, split, synthesize_missing, Dataset, MaskedMatrix, MtsSample, NormStats};
use lgnet_core::forecaster::{ModelConfig, ModelParams};
use lgnet_core::local_stats::{compute_backward_stats, compute_delta, decay, LocalStats};
use lgnet_core::memory::MemoryBank;
use lgnet_core::metrics::MetricsReport;
use lgnet_core::params::Parameters;
use lgnet_core::trainer::{masked_mse, masked_mse_value, rng_for, rollout, Batch};
use lgnet_core::{Graph, Tensor};
use proptest::prelude::*;

fn masked(max_rows: usize, max_cols: usize) -> impl Strategy<Value = MaskedMatrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(n, d)| {
        (prop::collection::vec(-5.0..5.0f64, n * d), prop::collection::vec(any::<bool>(), n * d))
            .prop_map(move |(v, m)| MaskedMatrix::new(n, d, v, m).unwrap())
    })
}

fn uniform(shape: &[usize], bound: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, bound, &mut rng_for(seed, 0))
}

fn sample(rows: usize, k: usize, d: usize, seed: u64, observed: f64) -> MtsSample {
    use rand::Rng;
    let mut rng = rng_for(seed, 1);
    let mut cells = |r: usize| -> Vec<Option<f64>> {
        (0..r * d).map(|_| (rng.gen::<f64>() < observed).then(|| rng.gen_range(-2.0..2.0))).collect()
    };
    let (h, t) = (cells(rows), cells(k));
    MtsSample::new(MaskedMatrix::from_cells(rows, d, &h).unwrap(), MaskedMatrix::from_cells(k, d, &t).unwrap())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_rows_on_simplex(rows in 1usize..5, cols in 1usize..8, scale in 0.1f64..50.0, seed in any::<u64>()) {
        let mut g = Graph::new();
        let x = g.constant(uniform(&[rows, cols], scale, seed)).unwrap();
        let s = g.softmax_rows(x).unwrap();
        for r in 0..rows {
            let row = g.value(s).row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_a_convex_combination(slots in 1usize..8, dim in 1usize..6, seed in any::<u64>(), alpha in 0.01f64..100.0) {
        let bank = MemoryBank { g: uniform(&[slots, dim], 2.0, seed), ..MemoryBank::zeros(slots, dim, 1) };
        let q = uniform(&[1, dim], 3.0, seed ^ 1);
        let (s, a) = bank.attend(q.data()).unwrap();
        prop_assert!(s.iter().all(|&v| v >= 0.0));
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // The weights themselves witness the readout as a point of the hull.
        for c in 0..dim {
            let expect: f64 = (0..slots).map(|l| s[l] * bank.g.get(l, c)).sum();
            prop_assert!((a[c] - expect).abs() < 1e-12);
        }
        let scaled: Vec<f64> = q.data().iter().map(|v| v * alpha).collect();
        let (s2, _) = bank.attend(&scaled).unwrap();
        // Whatever slot wins after scaling must carry a maximal logit.
        let logits: Vec<f64> = (0..slots).map(|l| (0..dim).map(|c| bank.g.get(l, c) * q.data()[c]).sum()).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in [&s, &s2] {
            let win = (0..slots).fold(0, |b, i| if v[i] > v[b] { i } else { b });
            prop_assert!(top - logits[win] < 1e-12, "slot {} loses to logit {}", win, top);
        }
    }

    #[test]
    fn delta_counts_the_trailing_gap(x in masked(12, 4)) {
        let delta = compute_delta(&x);
        let d = x.cols();
        for i in 0..x.rows() {
            for j in 0..d {
                let mut expect = 0;
                if !x.observed(i, j) {
                    let mut t = i;
                    while t > 0 && !x.observed(t, j) {
                        expect += 1;
                        t -= 1;
                    }
                }
                prop_assert_eq!(delta[i * d + j], expect, "cell ({}, {})", i, j);
            }
        }
    }

    #[test]
    fn local_estimate_keeps_observations(x in masked(12, 4), w in prop::collection::vec(-1.0..1.0f64, 4), b in prop::collection::vec(-1.0..1.0f64, 4)) {
        let d = x.cols();
        let st = LocalStats::compute(&x, &w[..d], &b[..d]);
        let back = compute_backward_stats(&x, &w[..d], &b[..d]);
        for idx in 0..x.rows() * d {
            if x.mask()[idx] {
                prop_assert_eq!(st.z.data()[idx].to_bits(), x.values()[idx].to_bits());
                prop_assert_eq!(back.data()[idx].to_bits(), x.values()[idx].to_bits());
            } else {
                let (lo, mu) = (st.last_obs.data()[idx], st.emp_mean.data()[idx]);
                let z = st.z.data()[idx];
                prop_assert!(z >= lo.min(mu) - 1e-12 && z <= lo.max(mu) + 1e-12);
            }
        }
    }

    #[test]
    fn decay_bounded_and_monotone(w in 0.0f64..3.0, b in -3.0f64..3.0, delta in 0u32..200) {
        let g0 = decay(delta as f64, w, b);
        let g1 = decay(delta as f64 + 1.0, w, b);
        prop_assert!(g0 > 0.0 && g0 <= 1.0);
        prop_assert!(g1 <= g0);
    }

    #[test]
    fn masked_cells_do_not_move_the_loss(rows in 1usize..4, cols in 1usize..6, seed in any::<u64>(), junk in -1e6f64..1e6) {
        let pred = uniform(&[rows, cols], 2.0, seed);
        let truth = uniform(&[rows, cols], 2.0, seed ^ 7);
        let mask = Tensor::new(&[rows, cols], uniform(&[rows, cols], 1.0, seed ^ 9).data().iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let mut moved = pred.clone();
        for (v, m) in moved.data_mut().iter_mut().zip(mask.data()) {
            if *m == 0.0 { *v += junk; }
        }
        let grad = |p: &Tensor| {
            let mut g = Graph::new();
            let v = g.param_owned(p.clone()).unwrap();
            let l = masked_mse(&mut g, v, &truth, &mask).unwrap();
            let mut gr = g.backward(l).unwrap();
            (g.value(l).item(), gr.take(v).unwrap())
        };
        let ((l1, g1), (l2, g2)) = (grad(&pred), grad(&moved));
        prop_assert_eq!(l1.to_bits(), l2.to_bits());
        prop_assert_eq!(l1.to_bits(), masked_mse_value(&moved, &truth, &mask).unwrap().to_bits());
        prop_assert_eq!(g1.data(), g2.data());
    }

    #[test]
    fn clipping_bounds_every_critic_tensor(c in 1e-4f64..0.5, seed in any::<u64>()) {
        let cfg = CriticConfig { conv1_channels: 2, conv2_channels: 3, hidden: 4, leak: 0.2 };
        let mut critic = CriticParams::init(3, 2, cfg, &mut rng_for(seed, 0));
        for (_, t) in critic.named_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        }
        critic.clip(c);
        prop_assert!(critic.max_abs() <= c);
    }

    #[test]
    fn critic_loss_identity(real in prop::collection::vec(-10.0..10.0f64, 1..20), fake in prop::collection::vec(-10.0..10.0f64, 1..20)) {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let lhs = critic_loss_value(&real, &fake).unwrap();
        let rhs = generator_adv_loss_value(&real).unwrap() + mean(&fake);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_sample_order(count in 1usize..8, seed in any::<u64>(), rot in 0usize..8) {
        let samples: Vec<MtsSample> = (0..count).map(|i| sample(3, 2, 2, seed.wrapping_add(i as u64), 0.8)).collect();
        prop_assume!(samples.iter().any(|s| s.target.observed_count() > 0));
        let preds: Vec<Tensor> = (0..count).map(|i| uniform(&[2, 2], 2.0, seed ^ i as u64)).collect();
        let a = MetricsReport::compute(&preds, &samples, None).unwrap();
        let (mut p2, mut s2) = (preds.clone(), samples.clone());
        p2.rotate_left(rot % count);
        s2.rotate_left(rot % count);
        p2.reverse();
        s2.reverse();
        let b = MetricsReport::compute(&p2, &s2, None).unwrap();
        prop_assert!((a.rmse - b.rmse).abs() < 1e-12 && (a.mae - b.mae).abs() < 1e-12);
        prop_assert_eq!(a.observed_cells, b.observed_cells);
        let sq: f64 = preds.iter().zip(&samples).map(|(p, s)| {
            (0..4).filter(|&c| s.target.mask()[c]).map(|c| (p.data()[c] - s.target.values()[c]).powi(2)).sum::<f64>()
        }).sum();
        prop_assert!((a.rmse * a.rmse * a.observed_cells as f64 - sq).abs() < 1e-9 * sq.max(1.0));
    }

    #[test]
    fn normalization_round_trips(count in 1usize..6, seed in any::<u64>(), shift in -100.0f64..100.0, spread in 0.01f64..50.0) {
        let mut samples: Vec<MtsSample> = (0..count).map(|i| sample(4, 2, 3, seed.wrapping_add(i as u64), 0.7)).collect();
        let affine = |m: &MaskedMatrix| {
            let v = m.values().iter().zip(m.mask()).map(|(v, &o)| if o { v * spread + shift } else { 0.0 }).collect();
            MaskedMatrix::new(m.rows(), m.cols(), v, m.mask().to_vec()).unwrap()
        };
        for s in &mut samples {
            *s = MtsSample::new(affine(&s.history), affine(&s.target)).unwrap();
        }
        prop_assume!(NormStats::fit(&samples).is_ok());
        let (norm, stats) = normalize(Dataset::new(samples.clone(), "p").unwrap()).unwrap();
        for (orig, z) in samples.iter().zip(&norm.samples) {
            prop_assert_eq!(orig.history.mask(), z.history.mask());
            for idx in 0..orig.history.values().len() {
                if orig.history.mask()[idx] {
                    let back = stats.denormalize(idx % 3, z.history.values()[idx]);
                    prop_assert!((back - orig.history.values()[idx]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn missingness_only_removes(count in 1usize..6, seed in any::<u64>(), p in 0.0f64..0.99) {
        let samples: Vec<MtsSample> = (0..count).map(|i| sample(5, 2, 2, seed.wrapping_add(i as u64), 0.6)).collect();
        let ds = Dataset::new(samples, "p").unwrap();
        let out = synthesize_missing(ds.clone(), p, seed).unwrap();
        for (a, b) in ds.samples.iter().zip(&out.samples) {
            for (m0, m1) in a.history.mask().iter().zip(b.history.mask()) {
                prop_assert!(*m0 || !*m1);
            }
            for idx in 0..a.history.values().len() {
                if b.history.mask()[idx] {
                    prop_assert_eq!(a.history.values()[idx], b.history.values()[idx]);
                }
            }
        }
    }

    #[test]
    fn splits_partition_the_samples(count in 10usize..60, seed in any::<u64>()) {
        // The first history value identifies each sample.
        let samples: Vec<MtsSample> = (0..count).map(|i| {
            let h = MaskedMatrix::fully_observed(2, 1, vec![i as f64, 0.0]).unwrap();
            let t = MaskedMatrix::fully_observed(1, 1, vec![0.0]).unwrap();
            MtsSample::new(h, t).unwrap()
        }).collect();
        let (tr, va, te) = split(&Dataset::new(samples, "p").unwrap(), seed).unwrap();
        prop_assert_eq!(tr.len(), count * 7 / 10);
        prop_assert_eq!(va.len(), count / 10);
        let mut ids: Vec<usize> = [tr, va, te].iter().flat_map(|d| d.samples.iter().map(|s| s.history.value(0, 0) as usize).collect::<Vec<_>>()).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..count).collect::<Vec<_>>());
    }
}

/// Largest relative error between backward-mode gradients of the masked
/// forecast loss and a five-point difference. Some gradients of the toy model
/// are ~1e-9 against an O(1) loss, too small for a two-point difference at
/// any step; the wider stencil resolves them.
fn forecaster_grad_error(model: &ModelParams, batch: &Batch) -> f64 {
    let params: Vec<Tensor> = model.named().into_iter().map(|(_, t)| t.clone()).collect();
    let loss = |ps: &[Tensor], grad: bool| {
        let mut g = Graph::new();
        let v: Vec<_> = ps.iter().map(|p| if grad { g.param(p) } else { g.constant_ref(p) }.unwrap()).collect();
        let r = rollout(&mut g, &model.vars_from(&v), batch).unwrap();
        let l = masked_mse(&mut g, r.forecast, &batch.truth, &batch.mask).unwrap();
        let grads = if grad {
            let mut gr = g.backward(l).unwrap();
            v.iter().zip(ps).map(|(x, p)| gr.take(*x).unwrap_or_else(|| Tensor::zeros(p.shape()))).collect()
        } else {
            Vec::new()
        };
        (g.value(l).item(), grads)
    };
    let analytic = loss(&params, true).1;
    let h = 1e-3;
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for ci in 0..grad.len() {
            let orig = params[pi].data()[ci];
            let mut at = |o: f64| {
                work[pi].data_mut()[ci] = orig + o;
                let v = loss(&work, false).0;
                work[pi].data_mut()[ci] = orig;
                v
            };
            let n = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            let a = grad.data()[ci];
            worst = worst.max((a - n).abs() / f64::max(1e-8, a.abs() + n.abs()));
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forecaster_gradients_match_differences(seed in any::<u64>(), observed in 0.3f64..1.0) {
        let cfg = ModelConfig { vars: 2, hidden: 3, memory_slots: 3, slot_dim: 4, use_memory: true };
        let model = ModelParams::init(cfg, &mut rng_for(seed, 2));
        let s = sample(4, 2, 2, seed, observed);
        prop_assume!(s.target.observed_count() > 0);
        let batch = Batch::new(&[&s], 2).unwrap();
        let err = forecaster_grad_error(&model, &batch);
        prop_assert!(err < 1e-4, "max relative error {:e}", err);
    }
}
