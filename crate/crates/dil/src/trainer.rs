//! Variation elimination and the alternating DIL loop.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DilError, Result};
use crate::exploit::{cap_for, exploit_kl, exploit_mmd_from, reference_fit, ExploitConfig, Exploitation, SubpopWeights};
use crate::kernels::KernelConfig;
use crate::models::{self, Architecture, Batch, Predictor, Task};
use crate::synthdata::Samples;

/// Model family; `d_in` comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Linear,
    Mlp2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: ArchKind,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { architecture: ArchKind::Linear, hidden: 16 }
    }
}

impl ModelConfig {
    pub fn architecture(&self, d_in: usize) -> Architecture {
        match self.architecture {
            ArchKind::Linear => Architecture::Linear { d_in },
            ArchKind::Mlp2 => Architecture::Mlp2 { d_in, hidden: self.hidden },
        }
    }

    /// Seeded initial model for `data`.
    pub fn init(&self, data: &Samples, seed: u64) -> Result<Predictor> {
        Predictor::init(self.architecture(data.dim()), data.task, seed)
    }
}

/// Which discrepancy drives the exploitation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mmd,
    Kl,
}

/// Full recipe for one DIL run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DilConfig {
    pub alpha0: f64,
    pub lambda: f64,
    /// Outer iterations (exploit, then eliminate).
    pub outer_iters: usize,
    pub inner_epochs: usize,
    pub learning_rate: f64,
    pub variant: Variant,
    pub model: ModelConfig,
    pub kernel: KernelConfig,
    pub exploit: ExploitConfig,
    pub seed: u64,
}

impl Default for DilConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.1,
            lambda: 10.0,
            outer_iters: 5,
            inner_epochs: 500,
            learning_rate: 0.05,
            variant: Variant::Mmd,
            model: ModelConfig::default(),
            kernel: KernelConfig::default(),
            exploit: ExploitConfig::default(),
            seed: 0,
        }
    }
}

impl DilConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0 <= 0.5) {
            return Err(DilError::InvalidParam(format!("alpha0 must lie in (0, 0.5], got {}", self.alpha0)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DilError::InvalidParam(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.outer_iters == 0 {
            return Err(DilError::InvalidParam("outer_iters must be >= 1".into()));
        }
        check_schedule(self.inner_epochs, self.learning_rate)?;
        if self.model.architecture == ArchKind::Mlp2 && self.model.hidden == 0 {
            return Err(DilError::InvalidParam("hidden width must be positive".into()));
        }
        self.exploit.validate()
    }
}

pub(crate) fn check_schedule(epochs: usize, lr: f64) -> Result<()> {
    if epochs == 0 {
        return Err(DilError::InvalidParam("epochs must be >= 1".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(DilError::InvalidParam(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

/// One outer iteration's record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub exploit_objective: f64,
    pub penalty: f64,
    pub train_loss: f64,
    pub support_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DilTrace {
    pub rows: Vec<TraceRow>,
    /// Sub-population found in the first outer iteration (on the raw inputs).
    pub first_weights: Option<SubpopWeights>,
    /// Sub-population found in the last outer iteration.
    pub last_weights: Option<SubpopWeights>,
}

impl DilTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,exploit_objective,penalty,train_loss,support_size")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{}",
                r.t, r.exploit_objective, r.penalty, r.train_loss, r.support_size
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Training objective for full-batch descent: risk under `primary` weights
/// plus `lambda * ||g_P - g_Q||^2` when a sub-population is given.
pub(crate) struct Objective<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub primary: Vec<f64>,
    pub subpop: Option<(Vec<f64>, f64)>,
}

impl<'a> Objective<'a> {
    pub fn erm(data: &'a Samples) -> Self {
        let n = data.len();
        Self { x: &data.x, y: &data.y, primary: vec![1.0 / n as f64; n], subpop: None }
    }

    pub fn penalized(data: &'a Samples, w: &SubpopWeights, lambda: f64) -> Self {
        let mut obj = Self::erm(data);
        if lambda > 0.0 {
            obj.subpop = Some((w.as_slice().to_vec(), lambda));
        }
        obj
    }

    /// `(objective, risk, penalty)`.
    pub fn value(&self, model: &Predictor) -> (f64, f64, f64) {
        match &self.subpop {
            None => {
                let risk = models::weighted_loss(model, self.x, self.y, &self.primary);
                (risk, risk, 0.0)
            }
            Some((q, lambda)) => {
                let res = models::loss_grads_multi(model, self.x, self.y, &[&self.primary, q]);
                let pen = (&res[0].1 - &res[1].1).norm_squared();
                (res[0].0 + lambda * pen, res[0].0, pen)
            }
        }
    }

    pub fn value_and_gradient(&self, model: &Predictor) -> (f64, DVector<f64>) {
        match &self.subpop {
            None => {
                let mut res = models::loss_grads_multi(model, self.x, self.y, &[&self.primary]);
                res.pop().expect("one weighting")
            }
            Some((q, lambda)) => {
                let res = models::loss_grads_multi(model, self.x, self.y, &[&self.primary, q]);
                let diff = &res[0].1 - &res[1].1;
                let hv = models::hvp_multi(model, self.x, self.y, &[&self.primary, q], &diff);
                let grad = &res[0].1 + (&hv[0] - &hv[1]) * (2.0 * lambda);
                (res[0].0 + lambda * diff.norm_squared(), grad)
            }
        }
    }
}

const MAX_HALVINGS: usize = 30;

/// Full-batch gradient descent with backtracking. Each epoch starts from `lr`
/// and halves until the objective does not increase; descent stops early when
/// no step is accepted. Returns the final objective.
pub(crate) fn descend<F>(model: &mut Predictor, epochs: usize, lr: f64, mut value_and_gradient: F, mut value: impl FnMut(&Predictor) -> f64) -> Result<f64>
where
    F: FnMut(&Predictor) -> (f64, DVector<f64>),
{
    let mut params = model.params().to_vec();
    let mut f_last = f64::NAN;
    for epoch in 0..epochs {
        let (f, g) = value_and_gradient(model);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(DilError::NonFiniteObjective { iteration: epoch });
        }
        f_last = f;
        let mut step = lr;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for (p, (p0, gi)) in params.iter_mut().zip(model.params().iter().zip(g.iter())) {
                *p = p0 - step * gi;
            }
            let trial = model.with_params(&params);
            let ft = value(&trial);
            if ft.is_finite() && ft <= f {
                *model = trial;
                f_last = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            debug!("descent stalled at epoch {epoch}, objective {f:.6e}");
            break;
        }
    }
    if epochs > 0 && f_last.is_nan() {
        return Err(DilError::NonFiniteObjective { iteration: 0 });
    }
    Ok(f_last)
}

/// `||grad L_P - grad L_Q||^2` between the pooled batch and the weighted one.
pub fn invariance_penalty(model: &Predictor, full: &Batch, weighted: &Batch) -> Result<f64> {
    check_same_samples(full, weighted)?;
    let gp = models::grad_params(model, full)?;
    let gq = models::grad_params(model, weighted)?;
    Ok((gp - gq).norm_squared())
}

/// Gradient of [`invariance_penalty`]: `2 (H_P - H_Q)(g_P - g_Q)` via
/// Hessian-vector products.
pub fn penalty_grad(model: &Predictor, full: &Batch, weighted: &Batch) -> Result<DVector<f64>> {
    check_same_samples(full, weighted)?;
    let diff = models::grad_params(model, full)? - models::grad_params(model, weighted)?;
    let hp = models::hessian_vector(model, full, &diff)?;
    let hq = models::hessian_vector(model, weighted, &diff)?;
    Ok((hp - hq) * 2.0)
}

fn check_same_samples(a: &Batch, b: &Batch) -> Result<()> {
    if !std::ptr::eq(a.x, b.x) && a.x != b.x || a.y != b.y {
        return Err(DilError::Dimension("penalty batches must cover the same samples".into()));
    }
    Ok(())
}

/// One variation-elimination stage: `inner_epochs` of descent on
/// `risk + lambda * penalty` against the sub-population `w`.
pub fn eliminate(model: &Predictor, data: &Samples, w: &SubpopWeights, cfg: &DilConfig) -> Result<Predictor> {
    Ok(eliminate_with_stats(model, data, w, cfg)?.0)
}

fn eliminate_with_stats(
    model: &Predictor,
    data: &Samples,
    w: &SubpopWeights,
    cfg: &DilConfig,
) -> Result<(Predictor, f64, f64)> {
    cfg.validate()?;
    if w.len() != data.len() {
        return Err(DilError::Dimension(format!("{} weights for {} samples", w.len(), data.len())));
    }
    let obj = Objective::penalized(data, w, cfg.lambda);
    let mut m = model.clone();
    descend(&mut m, cfg.inner_epochs, cfg.learning_rate, |p| obj.value_and_gradient(p), |p| obj.value(p).0)?;
    let (_, risk, _) = obj.value(&m);
    let pen = if cfg.lambda > 0.0 {
        obj.value(&m).2
    } else {
        let full = Batch::new(&data.x, &data.y);
        let weighted = Batch::weighted(&data.x, &data.y, w.as_slice());
        invariance_penalty(&m, &full, &weighted)?
    };
    Ok((m, risk, pen))
}

/// Representation handed to the exploitation step: the inputs for linear
/// models, the hidden activations for `Mlp2`.
pub fn representation(model: &Predictor, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.representation(x)
}

fn exploit_step(model: &Predictor, data: &Samples, cfg: &DilConfig, raw: bool, warm: Option<&[f64]>) -> Result<Exploitation> {
    let phi = if raw { data.x.clone() } else { representation(model, &data.x)? };
    match cfg.variant {
        Variant::Mmd => {
            let (phi, spec) = cfg.kernel.prepare(&phi)?;
            exploit_mmd_from(&phi, &data.y, cfg.alpha0, &spec, &cfg.exploit, data.task, warm)
        }
        Variant::Kl => {
            let reference = reference_fit(&phi, &data.y)?;
            exploit_kl(&phi, &data.y, cfg.alpha0, &reference, &cfg.exploit)
        }
    }
}

/// Alternate exploitation and elimination for `cfg.outer_iters` rounds,
/// warm-starting the model across rounds.
pub fn run_dil(data: &Samples, cfg: &DilConfig) -> Result<(Predictor, DilTrace)> {
    run_dil_from(data, cfg, None)
}

/// [`run_dil`] with starting weights for the first weight search (MMD variant).
pub fn run_dil_from(data: &Samples, cfg: &DilConfig, warm: Option<&[f64]>) -> Result<(Predictor, DilTrace)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(DilError::Empty("training set"));
    }
    cap_for(cfg.alpha0, data.len())?;
    if cfg.variant == Variant::Kl && data.task != Task::Regression {
        return Err(DilError::InvalidParam("the KL variant supports regression only".into()));
    }
    let mut model = cfg.model.init(data, cfg.seed)?;
    let fixed_phi = matches!(model.architecture(), Architecture::Linear { .. });
    let mut cached: Option<Exploitation> = None;
    let mut trace = DilTrace::default();
    for t in 1..=cfg.outer_iters {
        let ex = match &cached {
            Some(ex) => ex.clone(),
            // the first round always sees the raw inputs
            None => exploit_step(&model, data, cfg, t == 1, if t == 1 { warm } else { None })?,
        };
        if fixed_phi {
            cached = Some(ex.clone());
        }
        let (next, risk, pen) = eliminate_with_stats(&model, data, &ex.weights, cfg)?;
        model = next;
        info!(
            "round {t}: exploit {:.4e}, support {}, risk {risk:.4e}, penalty {pen:.4e}",
            ex.objective,
            ex.weights.support_size()
        );
        trace.rows.push(TraceRow {
            t,
            exploit_objective: ex.objective,
            penalty: pen,
            train_loss: risk,
            support_size: ex.weights.support_size(),
        });
        if t == 1 {
            trace.first_weights = Some(ex.weights.clone());
        }
        trace.last_weights = Some(ex.weights);
    }
    Ok((model, trace))
}
