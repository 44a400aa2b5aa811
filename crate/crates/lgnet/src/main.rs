use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lgnet::checkpoint::{Checkpoint, SavedModel};
use lgnet::config::RunConfig;
use lgnet::csv_io::{load_csv, write_series, write_table};
use lgnet::experiment::{self, SplitName, Variant};
use lgnet::report::{self, epoch_json};
use lgnet::synth::{generate, SynthConfig};
use lgnet::AppError;
use lgnet_core::metrics::Baseline;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "lgnet", version, about = "Forecasting multivariate time series with missing values")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic sinusoid corpus as CSV.
    Synth(SynthArgs),
    /// Train a model and write checkpoint, epoch log and resolved config.
    Train(ConfigArgs),
    /// Score a checkpoint on one split of its data.
    Evaluate(EvaluateArgs),
    /// Train and score once per missing ratio, alongside the baselines.
    Sweep(SweepArgs),
    /// Train the full model and its ablations on identical data.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 9)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    vars: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// key = value configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    missing_ratio: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig, AppError> {
        let mut cfg = match (&self.config, base) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(b)) => b,
            (None, None) => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(d) = &self.data {
            cfg.data = d.clone();
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(l) = self.lambda {
            cfg.train.lambda = l;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(p) = self.missing_ratio {
            cfg.missing_ratio = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Report errors in original units instead of normalized ones.
    #[arg(long)]
    denormalize: bool,
    /// Restrict the report to one forecast step (1-based).
    #[arg(long)]
    horizon: Option<usize>,
    /// Metrics CSV path; defaults to `<output_dir>/eval_<split>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    missing_ratios: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VariantArg {
    Full,
    NoMemory,
    NoAdversarial,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoMemory => Variant::NoMemory,
            VariantArg::NoAdversarial => Variant::NoAdversarial,
        }
    }
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "full,no_memory,no_adversarial")]
    variants: Vec<VariantArg>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn create_dir(dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

fn cmd_synth(a: &SynthArgs) -> Result<(), AppError> {
    if a.samples == 0 || a.vars == 0 || a.n + a.k == 0 || !(a.noise >= 0.0) {
        return Err(AppError::input("samples, vars and n + k must be positive and noise non-negative"));
    }
    let cfg = SynthConfig { rows: a.samples * (a.n + a.k), vars: a.vars, noise: a.noise, seed: a.seed };
    write_series(&a.out, &generate(&cfg))?;
    println!("wrote {} rows x {} variables to {}", cfg.rows, cfg.vars, a.out.display());
    Ok(())
}

fn cmd_train(a: &ConfigArgs) -> Result<(), AppError> {
    let cfg = a.resolve(None)?;
    let data = experiment::prepare(&cfg, None)?;
    if data.snippets.shortfall && cfg.train.lambda > 0.0 {
        eprintln!("warning: only {} real snippets available ({} requested)", data.snippets.len(), cfg.snippet_count);
    }
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_text(&dir.join("config.resolved"), &cfg.to_text())?;
    let r = experiment::train_and_test(&cfg, &data, |rec| println!("{}", epoch_json(rec)))?;
    report::write_epoch_log(&dir.join("metrics.jsonl"), &r.outcome.log)?;
    let saved = SavedModel {
        model: r.outcome.params.clone(),
        critic: r.outcome.critic.clone(),
        norm: data.norm.clone(),
        extra: config_metadata(&cfg, r.outcome.best_epoch),
    };
    saved.to_checkpoint().save(&dir.join("checkpoint.lgnet"))?;
    report::write_metrics(&dir.join("test_metrics.csv"), &r.test, None)?;
    println!("best epoch {}; test rmse {:.6} mae {:.6}", r.outcome.best_epoch, r.test.rmse, r.test.mae);
    Ok(())
}

fn config_metadata(cfg: &RunConfig, best_epoch: usize) -> std::collections::BTreeMap<String, String> {
    let mut m: std::collections::BTreeMap<String, String> = cfg
        .to_text()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (format!("run.{k}"), v.to_owned()))
        .collect();
    m.insert("train.best_epoch".into(), best_epoch.to_string());
    m
}

fn config_from_metadata(saved: &SavedModel) -> Result<RunConfig, AppError> {
    let text: String = saved
        .extra
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("run.").map(|k| format!("{k} = {v}\n")))
        .collect();
    RunConfig::parse_text(&text)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), AppError> {
    let saved = SavedModel::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let cfg = a.config.resolve(Some(config_from_metadata(&saved)?))?;
    if let Some(h) = a.horizon {
        if h == 0 || h > cfg.k {
            return Err(AppError::input(format!("--horizon must be in 1..={}", cfg.k)));
        }
    }
    if saved.model.config.vars != saved.norm.mean.len() {
        return Err(AppError::input("checkpoint normalization does not match the model width"));
    }
    let data = experiment::prepare(&cfg, Some(&saved.norm))?;
    let (which, name) = match a.split {
        SplitArg::Train => (SplitName::Train, "train"),
        SplitArg::Validation => (SplitName::Validation, "validation"),
        SplitArg::Test => (SplitName::Test, "test"),
    };
    let samples = &data.split(which).samples;
    if samples.first().is_some_and(|s| s.d() != saved.model.config.vars) {
        return Err(AppError::input(format!(
            "data has {} variables, checkpoint expects {}",
            samples[0].d(),
            saved.model.config.vars
        )));
    }
    let denorm = a.denormalize.then_some(&saved.norm);
    let rep = experiment::score(&saved.model, samples, denorm)?;
    print!("{}", report::render_metrics(&rep, a.horizon));
    let out = match &a.out {
        Some(p) => p.clone(),
        None => {
            create_dir(&cfg.output_dir)?;
            cfg.output_dir.join(format!("eval_{name}.csv"))
        }
    };
    report::write_metrics(&out, &rep, a.horizon)
}

#[derive(Serialize)]
struct SweepLine<'a> {
    missing_ratio: f64,
    method: &'a str,
    rmse: f64,
    mae: f64,
    cells: usize,
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), AppError> {
    let cfg = a.config.resolve(None)?;
    if a.missing_ratios.is_empty() || a.missing_ratios.iter().any(|p| !(0.0..1.0).contains(p)) {
        return Err(AppError::input("--missing-ratios must be values in [0, 1)"));
    }
    let corpus = load_csv(&cfg.data, cfg.n, cfg.k, cfg.effective_stride())?;
    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("config.resolved"), &cfg.to_text())?;
    let rows = experiment::run_missing_ratio_sweep(&cfg, &corpus, &a.missing_ratios, a.jobs)?;
    let mut table = Vec::new();
    let mut lines = Vec::new();
    for r in &rows {
        for (method, m) in [("lgnet", &r.model), ("carry_forward", &r.carry_forward), ("empirical_mean", &r.empirical_mean)] {
            table.push(vec![r.missing_ratio.to_string(), method.into(), m.rmse.to_string(), m.mae.to_string()]);
            lines.push(SweepLine { missing_ratio: r.missing_ratio, method, rmse: m.rmse, mae: m.mae, cells: m.observed_cells });
            println!("p={:<4} {:<15} rmse {:.6} mae {:.6}", r.missing_ratio, method, m.rmse, m.mae);
        }
    }
    write_table(&cfg.output_dir.join("sweep.csv"), &["missing_ratio", "method", "rmse", "mae"], &table)?;
    report::write_json_lines(&cfg.output_dir.join("sweep.jsonl"), &lines)
}

#[derive(Serialize)]
struct AblationLine<'a> {
    variant: &'a str,
    rmse: f64,
    mae: f64,
    best_epoch: usize,
}

fn cmd_ablate(a: &AblateArgs) -> Result<(), AppError> {
    let cfg = a.config.resolve(None)?;
    let data = experiment::prepare(&cfg, None)?;
    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("config.resolved"), &cfg.to_text())?;
    let variants: Vec<Variant> = a.variants.iter().map(|&v| v.into()).collect();
    let rows = experiment::run_ablation(&cfg, &data, &variants, a.jobs)?;
    let mut table = Vec::new();
    let mut lines = Vec::new();
    for r in &rows {
        let t = &r.result.test;
        println!("{:<15} rmse {:.6} mae {:.6}", r.variant.name(), t.rmse, t.mae);
        table.push(vec![r.variant.name().into(), t.rmse.to_string(), t.mae.to_string()]);
        lines.push(AblationLine { variant: r.variant.name(), rmse: t.rmse, mae: t.mae, best_epoch: r.result.outcome.best_epoch });
    }
    let cf = experiment::baseline_report(&data.test.samples, Baseline::CarryForward, None)?;
    table.push(vec!["carry_forward".into(), cf.rmse.to_string(), cf.mae.to_string()]);
    write_table(&cfg.output_dir.join("ablation.csv"), &["variant", "rmse", "mae"], &table)?;
    report::write_json_lines(&cfg.output_dir.join("ablation.jsonl"), &lines)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
