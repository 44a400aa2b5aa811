//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown keys are rejected. [`RunConfig::to_text`] writes the
//! fully resolved configuration, which parses back to an identical value.

use std::path::{Path, PathBuf};

use lgnet_core::critic::CriticConfig;
use lgnet_core::trainer::TrainConfig;

use crate::error::AppError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub output_dir: PathBuf,
    pub n: usize,
    pub k: usize,
    /// Window stride; 0 means `n + k` (non-overlapping windows).
    pub stride: usize,
    pub missing_ratio: f64,
    pub missing_seed: u64,
    pub split_seed: u64,
    pub snippet_count: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::from("data.csv"),
            output_dir: PathBuf::from("runs"),
            n: 9,
            k: 3,
            stride: 0,
            missing_ratio: 0.0,
            missing_seed: 1,
            split_seed: 0,
            snippet_count: 4096,
            train: TrainConfig::default(),
        }
    }
}

/// Every accepted key, in snapshot order.
pub const KEYS: &[&str] = &[
    "data",
    "output_dir",
    "n",
    "k",
    "stride",
    "missing_ratio",
    "missing_seed",
    "split_seed",
    "snippet_count",
    "k_prime",
    "lambda",
    "memory_slots",
    "slot_dim",
    "hidden",
    "use_memory",
    "learning_rate",
    "critic_learning_rate",
    "clip_c",
    "critic_steps",
    "epochs",
    "batch_size",
    "seed",
    "grad_clip",
    "critic_conv1",
    "critic_conv2",
    "critic_hidden",
    "critic_leak",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, AppError> {
    value
        .parse()
        .map_err(|_| AppError::input(format!("invalid value {value:?} for key {key:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), AppError> {
        let t = &mut self.train;
        match key {
            "data" => self.data = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "n" => self.n = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "missing_ratio" => self.missing_ratio = parse(key, value)?,
            "missing_seed" => self.missing_seed = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "snippet_count" => self.snippet_count = parse(key, value)?,
            "k_prime" => t.k_prime = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "memory_slots" => t.memory_slots = parse(key, value)?,
            "slot_dim" => t.slot_dim = parse(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "use_memory" => t.use_memory = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "critic_learning_rate" => t.critic_learning_rate = parse(key, value)?,
            "clip_c" => t.clip_c = parse(key, value)?,
            "critic_steps" => t.critic_steps = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "grad_clip" => t.grad_clip = parse(key, value)?,
            "critic_conv1" => t.critic.conv1_channels = parse(key, value)?,
            "critic_conv2" => t.critic.conv2_channels = parse(key, value)?,
            "critic_hidden" => t.critic.hidden = parse(key, value)?,
            "critic_leak" => t.critic.leak = parse(key, value)?,
            _ => {
                return Err(AppError::input(format!(
                    "unknown configuration key {key:?}; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "data" => self.data.display().to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "n" => self.n.to_string(),
            "k" => self.k.to_string(),
            "stride" => self.stride.to_string(),
            "missing_ratio" => self.missing_ratio.to_string(),
            "missing_seed" => self.missing_seed.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "snippet_count" => self.snippet_count.to_string(),
            "k_prime" => t.k_prime.to_string(),
            "lambda" => t.lambda.to_string(),
            "memory_slots" => t.memory_slots.to_string(),
            "slot_dim" => t.slot_dim.to_string(),
            "hidden" => t.hidden.to_string(),
            "use_memory" => t.use_memory.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "critic_learning_rate" => t.critic_learning_rate.to_string(),
            "clip_c" => t.clip_c.to_string(),
            "critic_steps" => t.critic_steps.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "seed" => t.seed.to_string(),
            "grad_clip" => t.grad_clip.to_string(),
            "critic_conv1" => t.critic.conv1_channels.to_string(),
            "critic_conv2" => t.critic.conv2_channels.to_string(),
            "critic_hidden" => t.critic.hidden.to_string(),
            "critic_leak" => t.critic.leak.to_string(),
            _ => unreachable!("key list and getter disagree"),
        }
    }

    pub fn parse_text(text: &str) -> Result<Self, AppError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::input(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| AppError::input(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text).map_err(|e| AppError::input(format!("{}: {e}", path.display())))
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), AppError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| AppError::input(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Fully resolved configuration text.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn effective_stride(&self) -> usize {
        if self.stride == 0 {
            self.n + self.k
        } else {
            self.stride
        }
    }

    /// Training configuration with `k` filled in from the window settings.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { k: self.k, ..self.train }
    }

    pub fn validate(&self) -> Result<(), AppError> {
        if self.n == 0 || self.k == 0 {
            return Err(AppError::input("n and k must be positive"));
        }
        if !(0.0..1.0).contains(&self.missing_ratio) {
            return Err(AppError::input(format!("missing_ratio must lie in [0, 1), got {}", self.missing_ratio)));
        }
        let c = self.train.critic;
        if c.conv1_channels == 0 || c.conv2_channels == 0 || c.hidden == 0 {
            return Err(AppError::input("critic widths must be positive"));
        }
        self.train_config().validate().map_err(|e| AppError::input(e.to_string()))
    }

    pub fn critic_config(&self) -> CriticConfig {
        self.train.critic
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse_text("# comment\n\nlambda = 0\nepochs=3\nuse_memory = false\n").unwrap();
        assert_eq!(cfg.train.lambda, 0.0);
        assert_eq!(cfg.train.epochs, 3);
        assert!(!cfg.train.use_memory);
        assert_eq!(cfg.n, 9);
        assert_eq!(cfg.effective_stride(), 12);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        let e = RunConfig::parse_text("lamda = 0.1").unwrap_err().to_string();
        assert!(e.contains("line 1") && e.contains("lamda") && e.contains("lambda"), "{e}");
        assert!(RunConfig::parse_text("epochs = many").is_err());
        assert!(RunConfig::parse_text("epochs").is_err());
        let mut c = RunConfig::default();
        assert!(c.apply_overrides(&["k_prime=9".into()]).is_ok());
        assert!(c.validate().is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["lambda=0.123456789012345678".into(), "data=/tmp/a b.csv".into(), "critic_leak=0.3".into()])
            .unwrap();
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse_text(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), KEYS.len());
    }
}
