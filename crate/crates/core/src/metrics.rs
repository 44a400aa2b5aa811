//! Forecast error metrics and the two naive baselines.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{MtsSample, NormStats};
use crate::error::{Error, Result};
use crate::local_stats::{compute_empirical_mean, compute_last_observation};
use crate::tensor::Tensor;

/// Running sums of squared and absolute errors over observed cells.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorSums {
    pub sum_sq: f64,
    pub sum_abs: f64,
    pub count: usize,
}

impl ErrorSums {
    pub fn add(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.sum_sq += e * e;
        self.sum_abs += e.abs();
        self.count += 1;
    }

    pub fn rmse(&self) -> Option<f64> {
        (self.count > 0).then(|| libm::sqrt(self.sum_sq / self.count as f64))
    }

    pub fn mae(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_abs / self.count as f64)
    }
}

fn pooled(preds: &[f64], truths: &[f64], mask: &[bool]) -> Result<ErrorSums> {
    if preds.len() != truths.len() || preds.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "metric",
            lhs: vec![preds.len()],
            rhs: vec![truths.len(), mask.len()],
        });
    }
    let mut acc = ErrorSums::default();
    for ((p, t), _) in preds.iter().zip(truths).zip(mask).filter(|(_, &m)| m) {
        acc.add(*p, *t);
    }
    if acc.count == 0 {
        return Err(Error::InvalidArgument("no observed cells to score".into()));
    }
    Ok(acc)
}

/// Root mean squared error over the observed cells.
pub fn rmse(preds: &[f64], truths: &[f64], mask: &[bool]) -> Result<f64> {
    Ok(pooled(preds, truths, mask)?.rmse().unwrap_or(0.0))
}

/// Mean absolute error over the observed cells.
pub fn mae(preds: &[f64], truths: &[f64], mask: &[bool]) -> Result<f64> {
    Ok(pooled(preds, truths, mask)?.mae().unwrap_or(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// One entry per horizon step.
    pub per_step: Vec<StepMetrics>,
    pub rmse: f64,
    pub mae: f64,
    pub samples: usize,
    pub observed_cells: usize,
}

impl MetricsReport {
    /// Scores `preds[i]` (`k × d`) against the target of `samples[i]`.
    ///
    /// With `denorm`, both sides are mapped back to original units first.
    pub fn compute(preds: &[Tensor], samples: &[MtsSample], denorm: Option<&NormStats>) -> Result<Self> {
        if preds.len() != samples.len() {
            return Err(Error::InvalidArgument(format!(
                "{} forecasts for {} samples",
                preds.len(),
                samples.len()
            )));
        }
        let k = samples.first().map_or(0, MtsSample::k);
        let mut steps = vec![ErrorSums::default(); k];
        let mut total = ErrorSums::default();
        for (p, s) in preds.iter().zip(samples) {
            let d = s.d();
            if p.shape() != [s.k(), d] || s.k() != k {
                return Err(Error::ShapeMismatch { op: "metrics", lhs: p.shape().to_vec(), rhs: vec![s.k(), d] });
            }
            for i in 0..k {
                for j in 0..d {
                    if let Some(t) = s.target.get(i, j) {
                        let mut pv = p.get(i, j);
                        let mut tv = t;
                        if let Some(n) = denorm {
                            pv = n.denormalize(j, pv);
                            tv = n.denormalize(j, tv);
                        }
                        steps[i].add(pv, tv);
                        total.add(pv, tv);
                    }
                }
            }
        }
        let (Some(rmse), Some(mae)) = (total.rmse(), total.mae()) else {
            return Err(Error::InvalidArgument("no observed target cells to score".into()));
        };
        Ok(MetricsReport {
            per_step: steps
                .iter()
                .map(|e| StepMetrics { rmse: e.rmse(), mae: e.mae(), cells: e.count })
                .collect(),
            rmse,
            mae,
            samples: samples.len(),
            observed_cells: total.count,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// Repeat each variable's last observed value.
    CarryForward,
    /// Repeat each variable's mean over the observed history.
    EmpiricalMean,
}

/// `k × d` naive forecast from the history of `sample`.
pub fn baseline_forecast(sample: &MtsSample, method: Baseline, k: usize) -> Tensor {
    let h = &sample.history;
    let (n, d) = (h.rows(), h.cols());
    // Append one unobserved row so the prefix statistics cover all of `h`.
    let mut values = h.values().to_vec();
    let mut mask = h.mask().to_vec();
    values.resize((n + 1) * d, 0.0);
    mask.resize((n + 1) * d, false);
    let padded = crate::data::MaskedMatrix::new(n + 1, d, values, mask).expect("consistent shape");
    let stats = match method {
        Baseline::CarryForward => compute_last_observation(&padded),
        Baseline::EmpiricalMean => compute_empirical_mean(&padded),
    };
    let last = stats.row(n);
    let data = (0..k).flat_map(|_| last.iter().copied()).collect();
    Tensor::new(&[k, d], data).expect("k x d")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MaskedMatrix;

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], &[true, true]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0], &[true, true]).unwrap(), 1.0);
        assert_eq!(rmse(&[3.0], &[0.0], &[true]).unwrap(), 3.0);
        assert_eq!(mae(&[1.0, -1.0], &[0.0, 0.0], &[true, true]).unwrap(), 1.0);
        assert_eq!(mae(&[1.0, 3.0], &[0.0, 0.0], &[true, true]).unwrap(), 2.0);
        assert_eq!(mae(&[5.0, 3.0], &[0.0, 0.0], &[false, true]).unwrap(), 3.0);
        assert!(rmse(&[1.0], &[0.0], &[false]).is_err());
        assert!(mae(&[1.0], &[0.0, 1.0], &[true]).is_err());
    }

    fn sample(cells: &[Option<f64>], n: usize, d: usize) -> MtsSample {
        let h = MaskedMatrix::from_cells(n, d, cells).unwrap();
        let t = MaskedMatrix::fully_observed(2, d, vec![0.0; 2 * d]).unwrap();
        MtsSample::new(h, t).unwrap()
    }

    #[test]
    fn baselines() {
        let s = sample(&[Some(4.0); 3], 3, 1);
        for m in [Baseline::CarryForward, Baseline::EmpiricalMean] {
            assert_eq!(baseline_forecast(&s, m, 2).data(), &[4.0, 4.0]);
        }
        let s = sample(&[None, Some(1.0), None, Some(7.0), None, None], 3, 2);
        assert_eq!(baseline_forecast(&s, Baseline::CarryForward, 2).data(), &[0.0, 7.0, 0.0, 7.0]);
        assert_eq!(baseline_forecast(&s, Baseline::EmpiricalMean, 1).data(), &[0.0, 4.0]);
        let s = sample(&[Some(2.0), Some(7.0), None], 3, 1);
        assert_eq!(baseline_forecast(&s, Baseline::CarryForward, 3).data(), &[7.0; 3]);
    }

    #[test]
    fn report_pools_cells_and_steps() {
        let h = MaskedMatrix::fully_observed(1, 2, vec![0.0, 0.0]).unwrap();
        let t = MaskedMatrix::from_cells(2, 2, &[Some(1.0), None, Some(0.0), Some(2.0)]).unwrap();
        let s = MtsSample::new(h, t).unwrap();
        let pred = Tensor::from_rows(&[&[0.0, 100.0], &[3.0, 2.0]]);
        let r = MetricsReport::compute(&[pred], &[s.clone()], None).unwrap();
        assert_eq!(r.observed_cells, 3);
        assert!((r.rmse * r.rmse * 3.0 - 10.0).abs() < 1e-12);
        assert_eq!(r.per_step[0].rmse, Some(1.0));
        assert_eq!(r.per_step[1].cells, 2);
        assert_eq!(r.mae, 4.0 / 3.0);
        let norm = NormStats { mean: vec![1.0, 0.0], std: vec![2.0, 1.0] };
        let pred = Tensor::from_rows(&[&[0.0, 100.0], &[3.0, 2.0]]);
        let r = MetricsReport::compute(&[pred], &[s], Some(&norm)).unwrap();
        assert!((r.per_step[0].rmse.unwrap() - 2.0).abs() < 1e-15);
    }
}
