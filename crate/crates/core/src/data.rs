//! Samples, windowing, normalization, synthetic missingness, splits and the
//! real-snippet set used by the critic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `rows × cols` matrix with a per-cell observation mask.
///
/// Missing cells always hold the value `0.0`; that sentinel is never read by
/// the model because every consumer goes through the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl MaskedMatrix {
    pub fn new(rows: usize, cols: usize, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != rows * cols || mask.len() != rows * cols {
            return Err(Error::Data(format!(
                "{rows}x{cols} matrix needs {} cells, got {} values and {} mask bits",
                rows * cols,
                values.len(),
                mask.len()
            )));
        }
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Data("observed cell is not finite".into()));
            }
        }
        Ok(MaskedMatrix { rows, cols, values, mask })
    }

    pub fn fully_observed(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(rows, cols, values, vec![true; rows * cols])
    }

    /// `None` marks a missing cell.
    pub fn from_cells(rows: usize, cols: usize, cells: &[Option<f64>]) -> Result<Self> {
        let values = cells.iter().map(|c| c.unwrap_or(0.0)).collect();
        let mask = cells.iter().map(Option::is_some).collect();
        Self::new(rows, cols, values, mask)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.cols + j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.observed(i, j).then(|| self.value(i, j))
    }

    pub fn set_missing(&mut self, i: usize, j: usize) {
        let idx = i * self.cols + j;
        self.mask[idx] = false;
        self.values[idx] = 0.0;
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn row_complete(&self, i: usize) -> bool {
        self.mask[i * self.cols..(i + 1) * self.cols].iter().all(|&m| m)
    }

    /// Same matrix with the row order reversed.
    pub fn reversed_rows(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        let mut mask = Vec::with_capacity(self.mask.len());
        for i in (0..self.rows).rev() {
            values.extend_from_slice(&self.values[i * self.cols..(i + 1) * self.cols]);
            mask.extend_from_slice(&self.mask[i * self.cols..(i + 1) * self.cols]);
        }
        MaskedMatrix { rows: self.rows, cols: self.cols, values, mask }
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn row_block(&self, start: usize, len: usize) -> Self {
        let r = start * self.cols..(start + len) * self.cols;
        MaskedMatrix {
            rows: len,
            cols: self.cols,
            values: self.values[r.clone()].to_vec(),
            mask: self.mask[r].to_vec(),
        }
    }

    /// Values as a dense tensor (missing cells read as 0).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.rows, self.cols], self.values.clone()).expect("consistent shape")
    }

    fn map_observed(&mut self, mut f: impl FnMut(usize, f64) -> f64) {
        for (idx, (v, &m)) in self.values.iter_mut().zip(&self.mask).enumerate() {
            if m {
                *v = f(idx % self.cols, *v);
            }
        }
    }
}

/// One forecasting example: `n` history rows and `k` target rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MtsSample {
    pub history: MaskedMatrix,
    pub target: MaskedMatrix,
}

impl MtsSample {
    pub fn new(history: MaskedMatrix, target: MaskedMatrix) -> Result<Self> {
        if history.rows() == 0 || target.rows() == 0 || history.cols() == 0 {
            return Err(Error::Data("samples need n >= 1, k >= 1 and d >= 1".into()));
        }
        if history.cols() != target.cols() {
            return Err(Error::Data(format!(
                "history has {} variables but target has {}",
                history.cols(),
                target.cols()
            )));
        }
        Ok(MtsSample { history, target })
    }

    pub fn n(&self) -> usize {
        self.history.rows()
    }

    pub fn k(&self) -> usize {
        self.target.rows()
    }

    pub fn d(&self) -> usize {
        self.history.cols()
    }
}

/// Per-variable z-score parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl NormStats {
    /// Population mean and standard deviation over the observed cells
    /// (history and target) of `samples`.
    pub fn fit(samples: &[MtsSample]) -> Result<Self> {
        let d = samples
            .first()
            .ok_or_else(|| Error::Data("cannot fit normalization on zero samples".into()))?
            .d();
        let mut count = vec![0usize; d];
        let mut sum = vec![0.0; d];
        for s in samples {
            for (j, v) in observed_cells(s) {
                count[j] += 1;
                sum[j] += v;
            }
        }
        if let Some(j) = count.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!("variable {j} has no observed training cells")));
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        let mut sq = vec![0.0; d];
        for s in samples {
            for (j, v) in observed_cells(s) {
                sq[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
        let std = sq
            .iter()
            .zip(&count)
            .map(|(s, &c)| libm::sqrt(s / c as f64).max(STD_FLOOR))
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn normalize_sample(&self, s: &mut MtsSample) {
        let (mean, std) = (&self.mean, &self.std);
        s.history.map_observed(|j, v| (v - mean[j]) / std[j]);
        s.target.map_observed(|j, v| (v - mean[j]) / std[j]);
    }

    pub fn denormalize(&self, var: usize, v: f64) -> f64 {
        v * self.std[var] + self.mean[var]
    }
}

fn observed_cells(s: &MtsSample) -> impl Iterator<Item = (usize, f64)> + '_ {
    [&s.history, &s.target].into_iter().flat_map(|m| {
        let d = m.cols();
        (0..m.rows() * d).filter(|&idx| m.mask()[idx]).map(move |idx| (idx % d, m.values()[idx]))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MtsSample>,
    pub norm: Option<NormStats>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(samples: Vec<MtsSample>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let (d, k) = (first.d(), first.k());
            if samples.iter().any(|s| s.d() != d || s.k() != k) {
                return Err(Error::Data("samples disagree on d or k".into()));
            }
        }
        Ok(Dataset { samples, norm: None, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d(&self) -> Option<usize> {
        self.samples.first().map(MtsSample::d)
    }

    pub fn k(&self) -> Option<usize> {
        self.samples.first().map(MtsSample::k)
    }

    /// Applies `stats` to every observed cell and records them.
    pub fn apply_normalization(&mut self, stats: &NormStats) {
        for s in &mut self.samples {
            stats.normalize_sample(s);
        }
        self.norm = Some(stats.clone());
    }

    pub fn history_observed_count(&self) -> usize {
        self.samples.iter().map(|s| s.history.observed_count()).sum()
    }
}

/// Cuts a long series into samples of `n` history and `k` target rows,
/// starting a new window every `stride` rows.
pub fn window_series(series: &MaskedMatrix, n: usize, k: usize, stride: usize) -> Result<Vec<MtsSample>> {
    if n == 0 || k == 0 || stride == 0 {
        return Err(Error::InvalidArgument("n, k and stride must be positive".into()));
    }
    let span = n + k;
    if series.rows() < span {
        return Err(Error::Data(format!(
            "series has {} rows, a window needs n + k = {span}",
            series.rows()
        )));
    }
    (0..=series.rows() - span)
        .step_by(stride)
        .map(|start| MtsSample::new(series.row_block(start, n), series.row_block(start + n, k)))
        .collect()
}

/// Z-scores `dataset` with statistics fitted on its own observed cells.
pub fn normalize(mut dataset: Dataset) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::fit(&dataset.samples)?;
    dataset.apply_normalization(&stats);
    Ok((dataset, stats))
}

/// Masks each observed history cell independently with probability `p`.
pub fn synthesize_missing(mut dataset: Dataset, p: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("missing ratio must lie in [0, 1), got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &mut dataset.samples {
        let h = &mut s.history;
        for i in 0..h.rows() {
            for j in 0..h.cols() {
                if h.observed(i, j) && rng.gen::<f64>() < p {
                    h.set_missing(i, j);
                }
            }
        }
    }
    dataset.provenance = format!("{}; missing p={p} seed={seed}", dataset.provenance);
    Ok(dataset)
}

/// Seeded 70/10/20 partition by sample: `floor(0.7N)`, `floor(0.1N)`, remainder.
pub fn split(dataset: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let n = dataset.len();
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 samples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 7 / 10;
    let n_val = n / 10;
    let part = |idx: &[usize], tag: &str| Dataset {
        samples: idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
        norm: dataset.norm.clone(),
        provenance: format!("{}; split={tag} seed={seed}", dataset.provenance),
    };
    Ok((
        part(&order[..n_train], "train"),
        part(&order[n_train..n_train + n_val], "validation"),
        part(&order[n_train + n_val..], "test"),
    ))
}

/// Fully observed `k′ × d` windows drawn from training histories.
#[derive(Clone, Debug, PartialEq)]
pub struct SnippetSet {
    pub snippets: Vec<Tensor>,
    pub rows: usize,
    /// Set when fewer than the requested number of windows existed.
    pub shortfall: bool,
}

impl SnippetSet {
    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }
}

/// Samples up to `count` distinct windows of `k_prime` consecutive fully
/// observed history rows, uniformly over all such windows.
pub fn sample_real_snippets(samples: &[MtsSample], k_prime: usize, count: usize, seed: u64) -> Result<SnippetSet> {
    if k_prime == 0 {
        return Err(Error::InvalidArgument("k' must be at least 1".into()));
    }
    let mut candidates = Vec::new();
    for (si, s) in samples.iter().enumerate() {
        let h = &s.history;
        let mut run = 0;
        for i in 0..h.rows() {
            run = if h.row_complete(i) { run + 1 } else { 0 };
            if run >= k_prime {
                candidates.push((si, i + 1 - k_prime));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let shortfall = candidates.len() < count;
    let snippets = candidates
        .into_iter()
        .take(count)
        .map(|(si, start)| samples[si].history.row_block(start, k_prime).to_tensor())
        .collect();
    Ok(SnippetSet { snippets, rows: k_prime, shortfall })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rows: usize, d: usize) -> MaskedMatrix {
        let v = (0..rows * d).map(|x| x as f64).collect();
        MaskedMatrix::fully_observed(rows, d, v).unwrap()
    }

    #[test]
    fn window_counts() {
        let s = series(12, 2);
        assert_eq!(window_series(&s, 9, 3, 12).unwrap().len(), 1);
        assert_eq!(window_series(&s, 9, 3, 1).unwrap().len(), 1);
        assert_eq!(window_series(&s, 4, 2, 6).unwrap().len(), 2);
        assert_eq!(window_series(&s, 4, 2, 1).unwrap().len(), 7);
        assert!(window_series(&s, 10, 3, 1).is_err());
    }

    #[test]
    fn windows_have_expected_rows() {
        let s = series(12, 2);
        let w = window_series(&s, 4, 2, 6).unwrap();
        assert_eq!(w[1].history.value(0, 0), 12.0);
        assert_eq!(w[1].target.value(1, 1), 23.0);
    }

    fn one_var(cells: &[Option<f64>]) -> Dataset {
        let h = MaskedMatrix::from_cells(cells.len(), 1, cells).unwrap();
        let t = MaskedMatrix::from_cells(1, 1, &[None]).unwrap();
        Dataset::new(vec![MtsSample::new(h, t).unwrap()], "test").unwrap()
    }

    #[test]
    fn two_point_zscore() {
        let (ds, st) = normalize(one_var(&[Some(2.0), None, Some(4.0)])).unwrap();
        assert_eq!(st.mean, vec![3.0]);
        assert_eq!(st.std, vec![1.0]);
        let h = &ds.samples[0].history;
        assert_eq!(h.get(0, 0), Some(-1.0));
        assert_eq!(h.get(1, 0), None);
        assert_eq!(h.get(2, 0), Some(1.0));
    }

    #[test]
    fn constant_variable_floors_std() {
        let (ds, st) = normalize(one_var(&[Some(5.0), Some(5.0), Some(5.0)])).unwrap();
        assert_eq!(st.std, vec![STD_FLOOR]);
        assert!(ds.samples[0].history.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unobserved_variable_rejected() {
        assert!(normalize(one_var(&[None, None])).is_err());
    }

    #[test]
    fn synth_zero_is_identity_and_p_one_rejected() {
        let ds = one_var(&[Some(1.0), Some(2.0), None]);
        assert_eq!(synthesize_missing(ds.clone(), 0.0, 3).unwrap().samples, ds.samples);
        assert!(synthesize_missing(ds.clone(), 1.0, 3).is_err());
        assert!(synthesize_missing(ds, -0.1, 3).is_err());
    }

    #[test]
    fn synth_half_of_ten_thousand() {
        let h = MaskedMatrix::fully_observed(100, 100, vec![1.0; 10_000]).unwrap();
        let t = MaskedMatrix::fully_observed(1, 100, vec![1.0; 100]).unwrap();
        let ds = Dataset::new(vec![MtsSample::new(h, t).unwrap()], "").unwrap();
        let a = synthesize_missing(ds.clone(), 0.5, 11).unwrap();
        let masked = 10_000 - a.history_observed_count();
        assert!((4700..=5300).contains(&masked), "{masked}");
        assert_eq!(a.samples[0].target.observed_count(), 100);
        let b = synthesize_missing(ds, 0.5, 11).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    fn many(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let h = MaskedMatrix::fully_observed(2, 1, vec![i as f64, 0.0]).unwrap();
                let t = MaskedMatrix::fully_observed(1, 1, vec![0.0]).unwrap();
                MtsSample::new(h, t).unwrap()
            })
            .collect();
        Dataset::new(samples, "").unwrap()
    }

    #[test]
    fn split_sizes() {
        let (a, b, c) = split(&many(100), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 10, 20));
        let (a, b, c) = split(&many(10), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
        let (a, b, c) = split(&many(13), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (9, 1, 3));
        assert!(split(&many(9), 1).is_err());
    }

    #[test]
    fn snippets_from_complete_rows() {
        let h = MaskedMatrix::from_cells(
            4,
            2,
            &[Some(1.0), Some(2.0), Some(3.0), None, Some(5.0), Some(6.0), Some(7.0), Some(8.0)],
        )
        .unwrap();
        let t = MaskedMatrix::fully_observed(1, 2, vec![0.0, 0.0]).unwrap();
        let samples = vec![MtsSample::new(h, t).unwrap()];
        let s2 = sample_real_snippets(&samples, 2, 10, 0).unwrap();
        assert_eq!(s2.len(), 1);
        assert!(s2.shortfall);
        assert_eq!(s2.snippets[0].data(), &[5.0, 6.0, 7.0, 8.0]);
        let s1 = sample_real_snippets(&samples, 1, 2, 0).unwrap();
        assert_eq!(s1.len(), 2);
        assert!(!s1.shortfall);
        assert!(sample_real_snippets(&samples, 0, 2, 0).is_err());
    }
}
