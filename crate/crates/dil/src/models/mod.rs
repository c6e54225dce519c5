//! Parametric predictors `f(x) = h(phi(x))` with exact gradients and
//! Hessian-vector products.
//!
//! Flat parameter layout is layer-major; within a layer the weight matrix comes
//! first in row-major order (one row per output unit), then the bias vector.
//!
//! * `Linear(d)`: `W (out x d)`, `b (out)`
//! * `Mlp2(d, h)`: `W1 (h x d)`, `b1 (h)`, `W2 (out x h)`, `b2 (out)`, tanh hidden units
//!
//! `out` is 1 for regression and `K` for `K`-class classification (softmax).

mod checkpoint;
mod scalar;

pub use checkpoint::{load, save, CHECKPOINT_VERSION};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DilError, Result};
use crate::kernels::class_index;
use scalar::{Dual, Real};

/// Learning task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

impl Task {
    pub fn out_dim(self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification { classes } => classes,
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear { d_in: usize },
    Mlp2 { d_in: usize, hidden: usize },
}

impl Architecture {
    pub fn d_in(self) -> usize {
        match self {
            Architecture::Linear { d_in } | Architecture::Mlp2 { d_in, .. } => d_in,
        }
    }

    pub fn n_params(self, out: usize) -> usize {
        match self {
            Architecture::Linear { d_in } => out * d_in + out,
            Architecture::Mlp2 { d_in, hidden } => hidden * d_in + hidden + out * hidden + out,
        }
    }
}

/// A model: architecture, task and flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    arch: Architecture,
    task: Task,
    params: Vec<f64>,
}

impl Predictor {
    pub fn zeros(arch: Architecture, task: Task) -> Result<Self> {
        Self::from_params(arch, task, vec![0.0; arch.n_params(task.out_dim())])
    }

    /// Seeded init: every parameter of a layer uniform in `[-a, a]`, `a = 1/sqrt(fan_in)`.
    pub fn init(arch: Architecture, task: Task, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = task.out_dim();
        let mut params = Vec::with_capacity(arch.n_params(out));
        let mut layer = |count: usize, fan_in: usize, params: &mut Vec<f64>| {
            let a = 1.0 / (fan_in.max(1) as f64).sqrt();
            params.extend((0..count).map(|_| rng.random_range(-a..=a)));
        };
        match arch {
            Architecture::Linear { d_in } => layer(out * d_in + out, d_in, &mut params),
            Architecture::Mlp2 { d_in, hidden } => {
                layer(hidden * d_in + hidden, d_in, &mut params);
                layer(out * hidden + out, hidden, &mut params);
            }
        }
        Self::from_params(arch, task, params)
    }

    pub fn from_params(arch: Architecture, task: Task, params: Vec<f64>) -> Result<Self> {
        if let Task::Classification { classes } = task {
            if classes < 2 {
                return Err(DilError::InvalidParam(format!("classification needs >= 2 classes, got {classes}")));
            }
        }
        if arch.d_in() == 0 {
            return Err(DilError::InvalidParam("input dimension must be positive".into()));
        }
        if let Architecture::Mlp2 { hidden: 0, .. } = arch {
            return Err(DilError::InvalidParam("hidden width must be positive".into()));
        }
        let expected = arch.n_params(task.out_dim());
        if params.len() != expected {
            return Err(DilError::Dimension(format!(
                "parameter count: expected {expected}, found {}",
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(DilError::InvalidParam(format!("parameter {i} is not finite")));
        }
        Ok(Self { arch, task, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Replace the parameters; the count must match.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(DilError::Dimension(format!(
                "parameter count: expected {}, found {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub(crate) fn with_params(&self, params: &[f64]) -> Self {
        Self { arch: self.arch, task: self.task, params: params.to_vec() }
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.arch.d_in() {
            return Err(DilError::Dimension(format!(
                "model expects {} input columns, got {}",
                self.arch.d_in(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Predictions (regression, `n x 1`) or logits (classification, `n x K`).
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let out = self.task.out_dim();
        let mut res = DMatrix::zeros(x.nrows(), out);
        let mut hidden = Vec::new();
        let mut logits = vec![0.0; out];
        for i in 0..x.nrows() {
            forward_row(self.arch, out, &self.params, x, i, &mut hidden, &mut logits);
            for (k, v) in logits.iter().enumerate() {
                res[(i, k)] = *v;
            }
        }
        Ok(res)
    }

    /// Point predictions: the regression output, or the argmax class as `f64`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let out = self.forward(x)?;
        Ok(match self.task {
            Task::Regression => out.column(0).iter().copied().collect(),
            Task::Classification { .. } => (0..out.nrows())
                .map(|i| {
                    let row = out.row(i);
                    let mut best = 0;
                    for k in 1..row.len() {
                        if row[k] > row[best] {
                            best = k;
                        }
                    }
                    best as f64
                })
                .collect(),
        })
    }

    /// The representation `phi(x)`: hidden activations for `Mlp2`, the raw input for `Linear`.
    pub fn representation(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        match self.arch {
            Architecture::Linear { .. } => Ok(x.clone()),
            Architecture::Mlp2 { d_in, hidden } => Ok(DMatrix::from_fn(x.nrows(), hidden, |i, h| {
                let row = &self.params[h * d_in..(h + 1) * d_in];
                let z: f64 = row.iter().enumerate().map(|(j, w)| w * x[(i, j)]).sum::<f64>()
                    + self.params[hidden * d_in + h];
                z.tanh()
            })),
        }
    }
}

fn forward_row(
    arch: Architecture,
    out: usize,
    p: &[f64],
    x: &DMatrix<f64>,
    i: usize,
    hidden: &mut Vec<f64>,
    logits: &mut [f64],
) {
    match arch {
        Architecture::Linear { d_in } => {
            for (o, l) in logits.iter_mut().enumerate() {
                *l = (0..d_in).map(|j| p[o * d_in + j] * x[(i, j)]).sum::<f64>() + p[out * d_in + o];
            }
        }
        Architecture::Mlp2 { d_in, hidden: nh } => {
            hidden.clear();
            hidden.extend((0..nh).map(|h| {
                ((0..d_in).map(|j| p[h * d_in + j] * x[(i, j)]).sum::<f64>() + p[nh * d_in + h]).tanh()
            }));
            let base = nh * d_in + nh;
            for (o, l) in logits.iter_mut().enumerate() {
                *l = (0..nh).map(|h| p[base + o * nh + h] * hidden[h]).sum::<f64>() + p[base + out * nh + o];
            }
        }
    }
}

/// Samples with optional per-sample weights (normalized internally).
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub weights: Option<&'a [f64]>,
}

impl<'a> Batch<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a [f64]) -> Self {
        Self { x, y, weights: None }
    }

    pub fn weighted(x: &'a DMatrix<f64>, y: &'a [f64], weights: &'a [f64]) -> Self {
        Self { x, y, weights: Some(weights) }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Normalized weights, uniform when absent.
    pub(crate) fn normalized_weights(&self) -> Result<Vec<f64>> {
        let n = self.y.len();
        if n == 0 {
            return Err(DilError::Empty("batch"));
        }
        if self.x.nrows() != n {
            return Err(DilError::Dimension(format!("{} rows vs {} targets", self.x.nrows(), n)));
        }
        match self.weights {
            None => Ok(vec![1.0 / n as f64; n]),
            Some(w) => {
                if w.len() != n {
                    return Err(DilError::Dimension(format!("{} weights for {n} samples", w.len())));
                }
                if let Some(i) = w.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(DilError::InvalidParam(format!("weight {i} is {}", w[i])));
                }
                let s: f64 = w.iter().sum();
                if s <= 0.0 {
                    return Err(DilError::InvalidParam("weights sum to zero".into()));
                }
                Ok(w.iter().map(|v| v / s).collect())
            }
        }
    }
}

fn check_targets(task: Task, y: &[f64]) -> Result<()> {
    match task {
        Task::Regression => match y.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(DilError::NonFinite { row: i, col: 0 }),
            None => Ok(()),
        },
        Task::Classification { classes } => match y.iter().position(|&v| class_index(v, classes).is_none()) {
            Some(i) => Err(DilError::InvalidParam(format!("row {i}: label {} not in [0, {classes})", y[i]))),
            None => Ok(()),
        },
    }
}

/// Weighted losses and gradients for several weightings of the same samples
/// in one sweep. `weightings` must already be normalized.
fn accumulate<T: Real>(
    arch: Architecture,
    task: Task,
    params: &[T],
    x: &DMatrix<f64>,
    y: &[f64],
    weightings: &[&[f64]],
) -> Vec<(T, Vec<T>)> {
    let out = task.out_dim();
    let np = params.len();
    let mut acc: Vec<(T, Vec<T>)> = weightings.iter().map(|_| (T::zero(), vec![T::zero(); np])).collect();
    let nh = match arch {
        Architecture::Mlp2 { hidden, .. } => hidden,
        Architecture::Linear { .. } => 0,
    };
    let d = arch.d_in();
    let mut hidden = vec![T::zero(); nh];
    let mut logits = vec![T::zero(); out];
    let mut dout = vec![T::zero(); out];
    let mut dz = vec![T::zero(); nh];

    for i in 0..y.len() {
        if weightings.iter().all(|w| w[i] == 0.0) {
            continue;
        }
        // forward
        match arch {
            Architecture::Linear { .. } => {
                for (o, l) in logits.iter_mut().enumerate() {
                    let mut s = params[out * d + o];
                    for j in 0..d {
                        s += params[o * d + j].scale(x[(i, j)]);
                    }
                    *l = s;
                }
            }
            Architecture::Mlp2 { .. } => {
                for (h, hv) in hidden.iter_mut().enumerate() {
                    let mut s = params[nh * d + h];
                    for j in 0..d {
                        s += params[h * d + j].scale(x[(i, j)]);
                    }
                    *hv = s.tanh();
                }
                let base = nh * d + nh;
                for (o, l) in logits.iter_mut().enumerate() {
                    let mut s = params[base + out * nh + o];
                    for h in 0..nh {
                        s += params[base + o * nh + h] * hidden[h];
                    }
                    *l = s;
                }
            }
        }
        // per-sample loss and d loss / d logits
        let loss_i = match task {
            Task::Regression => {
                let r = logits[0] - T::cst(y[i]);
                dout[0] = r.scale(2.0);
                r * r
            }
            Task::Classification { .. } => {
                let label = y[i] as usize;
                let m = logits.iter().map(|l| l.re()).fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<T> = logits.iter().map(|&l| (l - T::cst(m)).exp()).collect();
                let mut z = T::zero();
                for e in &exps {
                    z += *e;
                }
                for k in 0..out {
                    dout[k] = exps[k] / z - T::cst(if k == label { 1.0 } else { 0.0 });
                }
                z.ln() + T::cst(m) - logits[label]
            }
        };
        // backward to the hidden pre-activations
        if let Architecture::Mlp2 { .. } = arch {
            let base = nh * d + nh;
            for h in 0..nh {
                let mut s = T::zero();
                for o in 0..out {
                    s += params[base + o * nh + h] * dout[o];
                }
                dz[h] = s * (T::cst(1.0) - hidden[h] * hidden[h]);
            }
        }
        for (wts, (lacc, g)) in weightings.iter().zip(acc.iter_mut()) {
            let c = wts[i];
            if c == 0.0 {
                continue;
            }
            *lacc += loss_i.scale(c);
            match arch {
                Architecture::Linear { .. } => {
                    for o in 0..out {
                        let dc = dout[o].scale(c);
                        for j in 0..d {
                            g[o * d + j] += dc.scale(x[(i, j)]);
                        }
                        g[out * d + o] += dc;
                    }
                }
                Architecture::Mlp2 { .. } => {
                    let base = nh * d + nh;
                    for o in 0..out {
                        let dc = dout[o].scale(c);
                        for h in 0..nh {
                            g[base + o * nh + h] += dc * hidden[h];
                        }
                        g[base + out * nh + o] += dc;
                    }
                    for h in 0..nh {
                        let dc = dz[h].scale(c);
                        for j in 0..d {
                            g[h * d + j] += dc.scale(x[(i, j)]);
                        }
                        g[nh * d + h] += dc;
                    }
                }
            }
        }
    }
    acc
}

fn prepare(model: &Predictor, batch: &Batch) -> Result<Vec<f64>> {
    model.check_input(batch.x)?;
    let w = batch.normalized_weights()?;
    check_targets(model.task, batch.y)?;
    Ok(w)
}

/// Weighted mean loss: squared error (regression) or softmax cross-entropy.
pub fn loss(model: &Predictor, batch: &Batch) -> Result<f64> {
    let w = prepare(model, batch)?;
    let per = per_sample_losses(model, batch.x, batch.y)?;
    Ok(per.iter().zip(&w).map(|(l, c)| l * c).sum())
}

/// Exact gradient of [`loss`] with respect to the flat parameters.
pub fn grad_params(model: &Predictor, batch: &Batch) -> Result<DVector<f64>> {
    let w = prepare(model, batch)?;
    let mut res = accumulate(model.arch, model.task, &model.params, batch.x, batch.y, &[&w]);
    Ok(DVector::from_vec(res.pop().map(|(_, g)| g).unwrap_or_default()))
}

/// Hessian of [`loss`] applied to `v`, by forward-mode differentiation of the gradient.
pub fn hessian_vector(model: &Predictor, batch: &Batch, v: &DVector<f64>) -> Result<DVector<f64>> {
    let w = prepare(model, batch)?;
    Ok(hvp_multi(model, batch.x, batch.y, &[&w], v).pop().unwrap_or_default())
}

/// Losses and gradients for several normalized weightings of the same samples.
pub(crate) fn loss_grads_multi(
    model: &Predictor,
    x: &DMatrix<f64>,
    y: &[f64],
    weightings: &[&[f64]],
) -> Vec<(f64, DVector<f64>)> {
    accumulate(model.arch, model.task, &model.params, x, y, weightings)
        .into_iter()
        .map(|(l, g)| (l, DVector::from_vec(g)))
        .collect()
}

/// Hessian-vector products for several normalized weightings.
pub(crate) fn hvp_multi(
    model: &Predictor,
    x: &DMatrix<f64>,
    y: &[f64],
    weightings: &[&[f64]],
    v: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let duals: Vec<Dual> = model.params.iter().zip(v.iter()).map(|(&p, &t)| Dual::new(p, t)).collect();
    accumulate(model.arch, model.task, &duals, x, y, weightings)
        .into_iter()
        .map(|(_, g)| DVector::from_iterator(g.len(), g.into_iter().map(|d| d.eps)))
        .collect()
}

/// `sum_i w_i l_i` with the weights taken as given; NaN when the inputs are invalid.
pub(crate) fn weighted_loss(model: &Predictor, x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> f64 {
    match per_sample_losses(model, x, y) {
        Ok(per) => per.iter().zip(w).map(|(l, c)| l * c).sum(),
        Err(_) => f64::NAN,
    }
}

/// Unweighted per-sample losses.
pub fn per_sample_losses(model: &Predictor, x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(DilError::Dimension(format!("{} rows vs {} targets", x.nrows(), y.len())));
    }
    check_targets(model.task, y)?;
    let out = model.forward(x)?;
    Ok((0..y.len())
        .map(|i| match model.task {
            Task::Regression => (out[(i, 0)] - y[i]).powi(2),
            Task::Classification { .. } => {
                let row = out.row(i);
                let m = row.max();
                let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
                lse - row[y[i] as usize]
            }
        })
        .collect())
}

/// Fraction of argmax predictions equal to the labels (classification only).
pub fn accuracy(model: &Predictor, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    if !model.task.is_classification() {
        return Err(DilError::InvalidParam("accuracy is defined for classification only".into()));
    }
    if y.is_empty() {
        return Err(DilError::Empty("accuracy"));
    }
    let pred = model.predict(x)?;
    Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
}
