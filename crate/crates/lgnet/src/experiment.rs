//! Data preparation and the train / evaluate / ablate / sweep drivers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lgnet_core::data::{sample_real_snippets, split, synthesize_missing, Dataset, MtsSample, NormStats, SnippetSet};
use lgnet_core::forecaster::{predict, ModelParams};
use lgnet_core::metrics::{baseline_forecast, Baseline, MetricsReport};
use lgnet_core::trainer::{train, EpochRecord, TrainOutcome};

use crate::config::RunConfig;
use crate::csv_io::load_csv;
use crate::error::AppError;

/// Normalized, split and masked data for one run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub norm: NormStats,
    pub snippets: SnippetSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl Prepared {
    pub fn split(&self, which: SplitName) -> &Dataset {
        match which {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

/// Reads the configured CSV and prepares it.
pub fn prepare(cfg: &RunConfig, norm: Option<&NormStats>) -> Result<Prepared, AppError> {
    cfg.validate()?;
    let ds = load_csv(&cfg.data, cfg.n, cfg.k, cfg.effective_stride())?;
    prepare_dataset(&ds, cfg, norm)
}

/// Split, normalize, draw the real snippets, then synthesize missingness.
///
/// Normalization is fitted on the training split unless `norm` is given.
/// Real snippets come from the training histories before synthetic masking,
/// so high missing ratios do not leave the critic without complete windows.
pub fn prepare_dataset(ds: &Dataset, cfg: &RunConfig, norm: Option<&NormStats>) -> Result<Prepared, AppError> {
    let input = |e: lgnet_core::Error| AppError::input(e.to_string());
    let (mut train, mut validation, mut test) = split(ds, cfg.split_seed).map_err(input)?;
    let norm = match norm {
        Some(n) => n.clone(),
        None => NormStats::fit(&train.samples).map_err(input)?,
    };
    for part in [&mut train, &mut validation, &mut test] {
        part.apply_normalization(&norm);
    }
    let snippets = sample_real_snippets(&train.samples, cfg.train.k_prime, cfg.snippet_count, cfg.split_seed)
        .map_err(input)?;
    let p = cfg.missing_ratio;
    let s = cfg.missing_seed;
    let train = synthesize_missing(train, p, s).map_err(input)?;
    let validation = synthesize_missing(validation, p, s.wrapping_add(1)).map_err(input)?;
    let test = synthesize_missing(test, p, s.wrapping_add(2)).map_err(input)?;
    Ok(Prepared { train, validation, test, norm, snippets })
}

pub struct RunResult {
    pub outcome: TrainOutcome,
    pub test: MetricsReport,
}

/// Trains on the prepared data and scores the selected parameters on test.
pub fn train_and_test(
    cfg: &RunConfig,
    data: &Prepared,
    observer: impl FnMut(&EpochRecord),
) -> Result<RunResult, AppError> {
    let tc = cfg.train_config();
    let snippets = if tc.lambda > 0.0 { data.snippets.clone() } else { SnippetSet { snippets: vec![], rows: tc.k_prime, shortfall: false } };
    if tc.lambda > 0.0 && snippets.is_empty() {
        return Err(AppError::input(format!(
            "no fully observed {}-row windows in the training histories; the critic needs at least one",
            tc.k_prime
        )));
    }
    let outcome = train(&data.train.samples, &data.validation.samples, &snippets, &tc, observer)?;
    let test = score(&outcome.params, &data.test.samples, None)?;
    Ok(RunResult { outcome, test })
}

/// Forecast metrics of `params` on `samples`, optionally in original units.
pub fn score(params: &ModelParams, samples: &[MtsSample], denorm: Option<&NormStats>) -> Result<MetricsReport, AppError> {
    if samples.is_empty() {
        return Err(AppError::input("nothing to evaluate: the selected split is empty"));
    }
    let k = samples[0].k();
    let preds = predict(params, samples, k, 256)?;
    Ok(MetricsReport::compute(&preds, samples, denorm)?)
}

pub fn baseline_report(samples: &[MtsSample], method: Baseline, denorm: Option<&NormStats>) -> Result<MetricsReport, AppError> {
    if samples.is_empty() {
        return Err(AppError::input("nothing to evaluate: the selected split is empty"));
    }
    let k = samples[0].k();
    let preds: Vec<_> = samples.iter().map(|s| baseline_forecast(s, method, k)).collect();
    Ok(MetricsReport::compute(&preds, samples, denorm)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoMemory,
    NoAdversarial,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoMemory, Variant::NoAdversarial];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMemory => "no_memory",
            Variant::NoAdversarial => "no_adversarial",
        }
    }

    /// The single switch that distinguishes this variant from `full`.
    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoMemory => c.train.use_memory = false,
            Variant::NoAdversarial => c.train.lambda = 0.0,
        }
        c
    }
}

/// Runs `f` over `items` on up to `jobs` threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<R, AppError> + Sync,
) -> Result<Vec<R>, AppError> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<R, AppError>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every item was processed"))
        .collect()
}

pub struct AblationRow {
    pub variant: Variant,
    pub result: RunResult,
}

/// Trains each variant on the same prepared data and seed.
pub fn run_ablation(cfg: &RunConfig, data: &Prepared, variants: &[Variant], jobs: usize) -> Result<Vec<AblationRow>, AppError> {
    parallel_map(variants, jobs, |&v| {
        let c = v.apply(cfg);
        Ok(AblationRow { variant: v, result: train_and_test(&c, data, |_| {})? })
    })
}

pub struct SweepRow {
    pub missing_ratio: f64,
    pub model: MetricsReport,
    pub carry_forward: MetricsReport,
    pub empirical_mean: MetricsReport,
    pub log: Vec<EpochRecord>,
}

/// For each ratio: mask the (fully observed) corpus with the fixed
/// missingness seed, train, and score the model and both baselines on the
/// same masked test split.
pub fn run_missing_ratio_sweep(cfg: &RunConfig, corpus: &Dataset, ratios: &[f64], jobs: usize) -> Result<Vec<SweepRow>, AppError> {
    parallel_map(ratios, jobs, |&p| {
        let mut c = cfg.clone();
        c.missing_ratio = p;
        c.validate()?;
        let data = prepare_dataset(corpus, &c, None)?;
        let r = train_and_test(&c, &data, |_| {})?;
        Ok(SweepRow {
            missing_ratio: p,
            model: r.test,
            carry_forward: baseline_report(&data.test.samples, Baseline::CarryForward, None)?,
            empirical_mean: baseline_report(&data.test.samples, Baseline::EmpiricalMean, None)?,
            log: r.outcome.log,
        })
    })
}
