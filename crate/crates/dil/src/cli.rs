//! Command-line front end. Each command writes its outputs into a directory
//! together with the effective configuration.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::baselines::train_baseline;
use crate::config::{Preset, RunConfig};
use crate::error::{DilError, Result};
use crate::eval::{alpha_sweep, evaluate, probe_invariance, save_sweep_csv, SweepMethod};
use crate::models;
use crate::synthdata::{
    classification_suite, gen_selection_bias, gen_spurious_classification, load_csv, regression_suite, save_csv,
    Dataset, SelectionBiasSpec, SpuriousClassSpec, Suite, TestEnv,
};
use crate::trainer::{run_dil, Variant};

pub const CONFIG_ECHO: &str = "config.toml";
pub const CHECKPOINT: &str = "model.json";
pub const TRACE: &str = "trace.csv";
pub const METRICS: &str = "metrics.json";
pub const SWEEP: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "dil", version, about = "Distributionally invariant learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one synthetic dataset.
    Gen(GenArgs),
    /// Write a full train/test suite.
    GenSuite(GenSuiteArgs),
    /// Train a model and save its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on every `test*.csv` in a directory.
    Eval(EvalArgs),
    /// Estimate the worst sub-population discrepancy of a model's representation.
    Probe(ProbeArgs),
    /// Test accuracy of DIL and DRO over a grid of `alpha0`.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenTask {
    SelectionBias,
    SpuriousClass,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub task: GenTask,
    /// Bias ratio (`|r| > 1`) or bias rate (`0 < r <= 1`).
    #[arg(long, allow_negative_numbers = true)]
    pub r: f64,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Block dimension for spurious-class data.
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    /// Label noise standard deviation for selection-bias data.
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteKind {
    Regression,
    Classification,
}

#[derive(Debug, Args)]
pub struct GenSuiteArgs {
    #[arg(value_enum)]
    pub kind: SuiteKind,
    #[arg(long)]
    pub seed: u64,
    /// Majority bias ratio (regression) or second-group bias rate (classification).
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Erm,
    Dro,
    DilMmd,
    DilKl,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub alpha0: f64,
    /// Settings for the kernel and search; the preset follows the data when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the result here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `start:stop:step`, inclusive of `stop`.
    #[arg(long)]
    pub alphas: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "dil-mmd,dro")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `start:stop:step` into an inclusive grid.
pub fn parse_alpha_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || DilError::InvalidParam(format!("alpha grid must be start:stop:step, got `{text}`"));
    let parts: Vec<f64> = text.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0 && start > 0.0 && stop >= start) {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // round to 12 decimals so that 0.05 + 2 * 0.05 prints as 0.15
    Ok((0..count).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::GenSuite(a) => cmd_gen_suite(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Probe(a) => cmd_probe(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let data = match a.task {
        GenTask::SelectionBias => {
            let mut spec = SelectionBiasSpec { n: a.n, r: a.r, seed: a.seed, ..Default::default() };
            if let Some(sd) = a.noise_sd {
                spec.noise_sd = sd;
            }
            Dataset::new(gen_selection_bias(&spec)?, None)?
        }
        GenTask::SpuriousClass => {
            if a.noise_sd.is_some() {
                return Err(DilError::InvalidParam("--noise-sd applies to selection-bias data only".into()));
            }
            let spec = SpuriousClassSpec { n: a.n, r: a.r, d: a.d, seed: a.seed, ..Default::default() };
            Dataset::new(gen_spurious_classification(&spec)?.samples, None)?
        }
    };
    write_parent(&a.out)?;
    save_csv(&data, &a.out)
}

/// Writes `train.csv` and one `<name>.csv` per test environment.
pub fn write_suite(suite: &Suite, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    save_csv(&suite.train, dir.join("train.csv"))?;
    for env in &suite.tests {
        save_csv(&env.data, dir.join(format!("{}.csv", env.name)))?;
    }
    Ok(())
}

pub fn cmd_gen_suite(a: &GenSuiteArgs) -> Result<()> {
    let suite = match a.kind {
        SuiteKind::Regression => regression_suite(a.r.unwrap_or(1.5), a.seed)?,
        SuiteKind::Classification => classification_suite(a.d, a.r.unwrap_or(0.75), a.seed)?,
    };
    write_suite(&suite, &a.out)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join(CONFIG_ECHO), cfg.to_toml()?)?;
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = load_csv(&a.data)?.samples;
    let cfg = RunConfig::load(&a.config, Preset::for_task(data.task))?;
    create_dir(&a.out)?;
    echo_config(&cfg, &a.out)?;
    let model = match a.method {
        Method::Erm => train_baseline(&data, &cfg.baseline.erm(cfg.seed))?,
        Method::Dro => train_baseline(&data, &cfg.baseline.dro(cfg.seed))?,
        Method::DilMmd | Method::DilKl => {
            let variant = if a.method == Method::DilMmd { Variant::Mmd } else { Variant::Kl };
            let dil = crate::trainer::DilConfig { variant, ..cfg.dil.clone() };
            let (model, trace) = run_dil(&data, &dil)?;
            trace.save_csv(a.out.join(TRACE))?;
            model
        }
    };
    models::save(&model, a.out.join(CHECKPOINT))?;
    info!("wrote {}", a.out.display());
    Ok(())
}

/// Every `test*.csv` in `dir`, sorted by file name; the environment name is the file stem.
pub fn load_test_envs(dir: &Path) -> Result<Vec<TestEnv>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.starts_with("test"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DilError::Empty("test*.csv files in the data directory"));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok(TestEnv { name, data: load_csv(&p)? })
        })
        .collect()
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = models::load(&a.model)?;
    let envs = load_test_envs(&a.data_dir)?;
    let metrics = evaluate(&model, &envs)?;
    write_parent(&a.out)?;
    fs::write(&a.out, metrics.to_json()? + "\n")?;
    Ok(())
}

pub fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let model = models::load(&a.model)?;
    let data = load_csv(&a.data)?.samples;
    let cfg = match &a.config {
        Some(path) => RunConfig::load(path, Preset::for_task(data.task))?,
        None => RunConfig::preset(Preset::for_task(data.task), 0),
    };
    let (phi, spec) = cfg.probe.kernel.prepare(&model.representation(&data.x)?)?;
    let probe = probe_invariance(&phi, &data.y, a.alpha0, &spec, &cfg.probe.exploit, data.task)?;
    let json = serde_json::json!({
        "alpha0": a.alpha0,
        "delta_hat": probe.delta_hat,
        "lower_bound": true,
        "support_size": probe.weights.support_size(),
        "weights": probe.weights.as_slice(),
    });
    let text = serde_json::to_string_pretty(&json)? + "\n";
    match &a.out {
        Some(path) => {
            write_parent(path)?;
            fs::write(path, text)?;
            if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                echo_config(&cfg, dir)?;
            }
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let train = load_csv(&a.train)?.samples;
    let test = load_csv(&a.test)?.samples;
    let mut cfg = RunConfig::load(&a.config, Preset::for_task(train.task))?;
    if let Some(grid) = &a.alphas {
        cfg.sweep.alphas = parse_alpha_grid(grid)?;
        cfg.validate()?;
    }
    let methods = a.methods.iter().map(|m| m.parse::<SweepMethod>()).collect::<Result<Vec<_>>>()?;
    let rows = alpha_sweep(&train, &test, &cfg.sweep.alphas, &methods, &cfg.sweep_dil(), &cfg.sweep_dro())?;
    create_dir(&a.out)?;
    echo_config(&cfg, &a.out)?;
    save_sweep_csv(&rows, a.out.join(SWEEP))
}
