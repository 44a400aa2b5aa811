//! Bundled synthetic corpus: correlated mixed-frequency sinusoids with
//! additive Gaussian noise, fully observed.

use std::f64::consts::TAU;

use lgnet_core::data::MaskedMatrix;
use lgnet_core::trainer::rng_for;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::csv_io::Series;

/// Periods (in steps) of the shared latent oscillations.
pub const PERIODS: [f64; 4] = [12.0, 23.0, 47.0, 97.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub vars: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// The acceptance corpus: 2000 windows of 9 + 3 rows over 4 variables.
    pub fn corpus(seed: u64) -> Self {
        SynthConfig { rows: 2000 * 12, vars: 4, noise: 0.05, seed }
    }
}

pub fn generate(cfg: &SynthConfig) -> Series {
    let mut rng = rng_for(cfg.seed, 0);
    // Every variable mixes all latent oscillations with its own weights and
    // phase offsets, so variables are correlated but not identical.
    let mix: Vec<Vec<(f64, f64)>> = (0..cfg.vars)
        .map(|_| PERIODS.iter().map(|_| (rng.gen_range(0.2..1.0), rng.gen_range(0.0..TAU))).collect())
        .collect();
    let noise = Normal::new(0.0, cfg.noise).expect("noise level is finite and non-negative");
    let mut values = Vec::with_capacity(cfg.rows * cfg.vars);
    for t in 0..cfg.rows {
        for weights in &mix {
            let clean: f64 = PERIODS
                .iter()
                .zip(weights)
                .map(|(p, (a, phi))| a * (TAU * t as f64 / p + phi).sin())
                .sum();
            values.push(clean + noise.sample(&mut rng));
        }
    }
    Series {
        names: (0..cfg.vars).map(|j| format!("x{j}")).collect(),
        time: (0..cfg.rows as i64).collect(),
        data: MaskedMatrix::fully_observed(cfg.rows, cfg.vars, values).expect("finite values"),
    }
}
