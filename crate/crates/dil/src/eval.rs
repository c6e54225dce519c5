//! Metrics over test environments, the sub-population invariance probe and
//! the accuracy-versus-`alpha0` sweep.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{train_dro, BaselineConfig, BaselineMethod};
use crate::error::{DilError, Result};
use crate::exploit::{exploit_mmd_from, ExploitConfig, SubpopWeights};
use crate::kernels::KernelSpec;
use crate::models::{self, Batch, Predictor, Task};
use crate::synthdata::{Samples, TestEnv};
use crate::trainer::{run_dil_from, DilConfig};

/// Loss (and accuracy, for classifiers) on one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvResult {
    pub name: String,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Summary of per-environment losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    pub per_env: Vec<EnvResult>,
    pub mean_error: f64,
    /// Sample standard deviation (divisor `k - 1`); absent for a single environment.
    pub std_error: Option<f64>,
    pub worst_error: f64,
    /// Mean accuracy over environments (classification only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl EnvMetrics {
    /// Aggregate already computed per-environment results.
    pub fn from_results(per_env: Vec<EnvResult>) -> Result<Self> {
        if per_env.is_empty() {
            return Err(DilError::Empty("environment list"));
        }
        let k = per_env.len() as f64;
        let mean_error = per_env.iter().map(|e| e.loss).sum::<f64>() / k;
        let std_error = (per_env.len() > 1).then(|| {
            (per_env.iter().map(|e| (e.loss - mean_error).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        });
        let worst_error = per_env.iter().map(|e| e.loss).fold(f64::NEG_INFINITY, f64::max);
        let accuracy = per_env
            .iter()
            .map(|e| e.accuracy)
            .collect::<Option<Vec<f64>>>()
            .map(|a| a.iter().sum::<f64>() / k);
        Ok(Self { per_env, mean_error, std_error, worst_error, accuracy })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluate `model` on each environment: mean squared error or cross-entropy,
/// plus accuracy for classifiers.
pub fn evaluate(model: &Predictor, envs: &[TestEnv]) -> Result<EnvMetrics> {
    let per_env = envs
        .iter()
        .map(|env| {
            let s = &env.data.samples;
            if s.is_empty() {
                return Err(DilError::Empty("test environment"));
            }
            let loss = models::loss(model, &Batch::new(&s.x, &s.y))?;
            let accuracy = match model.task() {
                Task::Classification { .. } => Some(models::accuracy(model, &s.x, &s.y)?),
                Task::Regression => None,
            };
            Ok(EnvResult { name: env.name.clone(), loss, accuracy })
        })
        .collect::<Result<Vec<_>>>()?;
    EnvMetrics::from_results(per_env)
}

/// Estimated worst-case conditional discrepancy of a fixed representation.
#[derive(Debug, Clone)]
pub struct InvarianceProbe {
    /// Best objective found by local search: a lower bound on the supremum.
    pub delta_hat: f64,
    pub weights: SubpopWeights,
}

/// Exploit settings used by the probe by default: four starts.
pub fn probe_config() -> ExploitConfig {
    ExploitConfig { restarts: 4, ..Default::default() }
}

/// Search for the sub-population whose conditional law of `y` given `phi`
/// departs most from the pooled one.
pub fn probe_invariance(
    phi: &DMatrix<f64>,
    y: &[f64],
    alpha0: f64,
    spec: &KernelSpec,
    cfg: &ExploitConfig,
    task: Task,
) -> Result<InvarianceProbe> {
    probe_invariance_from(phi, y, alpha0, spec, cfg, task, None)
}

/// [`probe_invariance`] seeded with a previous solution, e.g. from a larger
/// `alpha0` when probing a sequence of shrinking fractions.
pub fn probe_invariance_from(
    phi: &DMatrix<f64>,
    y: &[f64],
    alpha0: f64,
    spec: &KernelSpec,
    cfg: &ExploitConfig,
    task: Task,
    warm: Option<&[f64]>,
) -> Result<InvarianceProbe> {
    let ex = exploit_mmd_from(phi, y, alpha0, spec, cfg, task, warm)?;
    Ok(InvarianceProbe { delta_hat: ex.objective.max(0.0), weights: ex.weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMethod {
    DilMmd,
    Dro,
}

impl SweepMethod {
    pub fn name(self) -> &'static str {
        match self {
            SweepMethod::DilMmd => "dil-mmd",
            SweepMethod::Dro => "dro",
        }
    }
}

impl std::str::FromStr for SweepMethod {
    type Err = DilError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dil-mmd" | "dil" => Ok(SweepMethod::DilMmd),
            "dro" => Ok(SweepMethod::Dro),
            other => Err(DilError::InvalidParam(format!("unknown sweep method `{other}` (dil-mmd, dro)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub alpha0: f64,
    pub test_acc: f64,
    pub test_loss: f64,
    pub seed: u64,
}

/// Train every method at every `alpha0` and score it on `test`. Rows come out
/// ordered by method, then by `alpha0` as given. DIL's first weight search at
/// each `alpha0` starts from the weights of the previous one.
pub fn alpha_sweep(
    train: &Samples,
    test: &Samples,
    alphas: &[f64],
    methods: &[SweepMethod],
    dil: &DilConfig,
    dro: &BaselineConfig,
) -> Result<Vec<SweepRow>> {
    if !train.task.is_classification() {
        return Err(DilError::InvalidParam("the sweep reports accuracy and needs a classification task".into()));
    }
    if alphas.is_empty() || methods.is_empty() {
        return Err(DilError::Empty("sweep grid"));
    }
    let mut rows = Vec::with_capacity(alphas.len() * methods.len());
    let mut sorted = methods.to_vec();
    sorted.sort();
    sorted.dedup();
    for method in sorted {
        let mut warm: Option<Vec<f64>> = None;
        for &alpha0 in alphas {
            let (model, seed) = match method {
                SweepMethod::DilMmd => {
                    let cfg = DilConfig { alpha0, ..dil.clone() };
                    let (model, trace) = run_dil_from(train, &cfg, warm.as_deref())?;
                    warm = trace.first_weights.map(SubpopWeights::into_vec);
                    (model, cfg.seed)
                }
                SweepMethod::Dro => {
                    let cfg = BaselineConfig { method: BaselineMethod::Dro { alpha0 }, ..dro.clone() };
                    (train_dro(train, &cfg)?, cfg.seed)
                }
            };
            rows.push(SweepRow {
                method: method.name().into(),
                alpha0,
                test_acc: models::accuracy(&model, &test.x, &test.y)?,
                test_loss: models::loss(&model, &Batch::new(&test.x, &test.y))?,
                seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "alpha0", "test_acc", "test_loss", "seed"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            format!("{:.16e}", r.alpha0),
            format!("{:.16e}", r.test_acc),
            format!("{:.16e}", r.test_loss),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    write_sweep_csv(rows, std::fs::File::create(path)?)
}

fn csv_err(e: csv::Error) -> DilError {
    DilError::Csv { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() }
}

/// `max - min` of the test accuracies of one method.
pub fn accuracy_range(rows: &[SweepRow], method: SweepMethod) -> Option<f64> {
    let acc: Vec<f64> = rows.iter().filter(|r| r.method == method.name()).map(|r| r.test_acc).collect();
    if acc.is_empty() {
        return None;
    }
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    Some(hi - lo)
}
