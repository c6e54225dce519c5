//! Variation exploitation: the sub-population (sample weights on the capped
//! simplex) whose conditional law `Y | phi` departs most from the pooled one.

mod kl;
mod projection;

pub use kl::{exploit_kl, kl_scores, reference_fit, weighted_least_squares};
pub use projection::{project_capped_simplex, top_mass_weights};

use std::hash::{DefaultHasher, Hash, Hasher};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DilError, Result};
use crate::kernels::{class_index, CmmdObjective, KernelSpec};
use crate::models::Task;

/// `1 / (alpha0 * n)`, the per-sample weight cap of a sub-population of proportion `alpha0`.
pub fn cap_for(alpha0: f64, n: usize) -> Result<f64> {
    if !(alpha0 > 0.0 && alpha0 <= 1.0) {
        return Err(DilError::InvalidParam(format!("alpha0 must lie in (0, 1], got {alpha0}")));
    }
    if n == 0 {
        return Err(DilError::Empty("sub-population over zero samples"));
    }
    let cap = 1.0 / (alpha0 * n as f64);
    if alpha0 * (n as f64) < 1.0 - 1e-12 {
        return Err(DilError::Infeasible { cap, n });
    }
    Ok(cap)
}

/// Sample weights describing a sub-population of proportion at least `alpha0`:
/// `0 <= w_i <= 1 / (alpha0 n)` and `sum w = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubpopWeights {
    w: Vec<f64>,
    alpha0: f64,
}

impl SubpopWeights {
    pub fn new(w: Vec<f64>, alpha0: f64) -> Result<Self> {
        let cap = cap_for(alpha0, w.len())?;
        for (i, &v) in w.iter().enumerate() {
            if !(v >= 0.0 && v <= cap * (1.0 + 1e-9) + 1e-15) {
                return Err(DilError::InvalidParam(format!("weight {i} = {v} outside [0, {cap}]")));
            }
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(DilError::InvalidParam(format!("weights sum to {s}, not 1")));
        }
        Ok(Self { w, alpha0 })
    }

    pub(crate) fn from_cap(w: Vec<f64>, cap: f64) -> Result<Self> {
        let alpha0 = (1.0 / (cap * w.len() as f64)).min(1.0);
        Self::new(w, alpha0)
    }

    pub fn uniform(n: usize, alpha0: f64) -> Result<Self> {
        cap_for(alpha0, n)?;
        Ok(Self { w: vec![1.0 / n as f64; n], alpha0 })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.w
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn cap(&self) -> f64 {
        1.0 / (self.alpha0 * self.w.len() as f64)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Number of samples with positive weight.
    pub fn support_size(&self) -> usize {
        self.w.iter().filter(|&&v| v > 0.0).count()
    }

    /// Total weight on the given indices.
    pub fn mass_on(&self, idx: impl IntoIterator<Item = usize>) -> f64 {
        idx.into_iter().map(|i| self.w[i]).sum()
    }
}

/// Optimizer settings for the weight search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploitConfig {
    /// Ascent iterations (alternation rounds for the KL variant).
    pub steps: usize,
    /// Initial step, in units of the weight cap per iteration.
    pub step_size: f64,
    /// Weight of the label-marginal KL penalty (classification only).
    pub entropy_coeff: f64,
    pub seed: u64,
    /// Stop once an accepted step gains less than `tol * |objective|`.
    pub tol: f64,
    /// Independent starts; the best is kept.
    pub restarts: usize,
    /// Run on a uniform subsample of at most this many points and extend
    /// the weights to the rest by nearest neighbour.
    pub max_batch: Option<usize>,
}

impl Default for ExploitConfig {
    fn default() -> Self {
        Self { steps: 200, step_size: 0.5, entropy_coeff: 1.0, seed: 0, tol: 1e-9, restarts: 2, max_batch: None }
    }
}

impl ExploitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(DilError::InvalidParam(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(self.entropy_coeff >= 0.0 && self.entropy_coeff.is_finite()) {
            return Err(DilError::InvalidParam("entropy_coeff must be >= 0".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(DilError::InvalidParam("tol must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(DilError::InvalidParam("restarts must be >= 1".into()));
        }
        if self.max_batch == Some(0) {
            return Err(DilError::InvalidParam("max_batch must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a weight search.
#[derive(Debug, Clone)]
pub struct Exploitation {
    pub weights: SubpopWeights,
    /// Final objective (CMMD minus the marginal penalty, or the KL score).
    pub objective: f64,
    /// Objective after each accepted iteration; non-decreasing.
    pub trace: Vec<f64>,
}

/// `sum_k Q(Y=k) ln(Q(Y=k) / P(Y=k))` with `Q(Y=k)` the weight on class `k`
/// and `P` the empirical class frequencies.
pub fn marginal_kl(w: &[f64], y: &[f64], classes: usize) -> Result<f64> {
    let (q, p) = class_masses(w, y, classes)?;
    if let Some(k) = p.iter().position(|&v| v == 0.0) {
        return Err(DilError::AbsentClass { class: k, mass: q[k] });
    }
    let mut kl = 0.0;
    for k in 0..classes {
        if q[k] > 0.0 {
            kl += q[k] * (q[k] / p[k]).ln();
        }
    }
    Ok(kl)
}

fn class_masses(w: &[f64], y: &[f64], classes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if w.len() != y.len() {
        return Err(DilError::Dimension(format!("{} weights for {} labels", w.len(), y.len())));
    }
    if y.is_empty() {
        return Err(DilError::Empty("labels"));
    }
    let mut q = vec![0.0; classes];
    let mut p = vec![0.0; classes];
    for (i, (&wi, &yi)) in w.iter().zip(y).enumerate() {
        let k = class_index(yi, classes)
            .ok_or_else(|| DilError::InvalidParam(format!("row {i}: label {yi} not in [0, {classes})")))?;
        q[k] += wi;
        p[k] += 1.0;
    }
    let n = y.len() as f64;
    p.iter_mut().for_each(|v| *v /= n);
    Ok((q, p))
}

struct MarginalPenalty {
    labels: Vec<usize>,
    prior: Vec<f64>,
    coeff: f64,
}

impl MarginalPenalty {
    fn value_and_gradient(&self, w: &[f64]) -> (f64, DVector<f64>) {
        let mut q = vec![0.0; self.prior.len()];
        for (&k, &wi) in self.labels.iter().zip(w) {
            q[k] += wi;
        }
        let kl: f64 = q
            .iter()
            .zip(&self.prior)
            .filter(|(qk, _)| **qk > 0.0)
            .map(|(qk, pk)| qk * (qk / pk).ln())
            .sum();
        let dk: Vec<f64> =
            q.iter().zip(&self.prior).map(|(qk, pk)| (qk.max(1e-300) / pk).ln() + 1.0).collect();
        let grad = DVector::from_iterator(w.len(), self.labels.iter().map(|&k| self.coeff * dk[k]));
        (self.coeff * kl, grad)
    }
}

/// CMMD, minus the marginal penalty for classification.
struct ExploitObjective {
    cmmd: CmmdObjective,
    marginal: Option<MarginalPenalty>,
}

impl ExploitObjective {
    fn new(phi: &DMatrix<f64>, y: &[f64], task: Task, spec: &KernelSpec, entropy_coeff: f64) -> Result<Self> {
        let cmmd = CmmdObjective::from_data(phi, y, task, spec)?;
        let marginal = match task {
            Task::Classification { classes } if entropy_coeff > 0.0 => {
                let uniform = vec![1.0 / y.len() as f64; y.len()];
                marginal_kl(&uniform, y, classes)?;
                let (_, prior) = class_masses(&uniform, y, classes)?;
                let labels = y.iter().map(|&v| v as usize).collect();
                Some(MarginalPenalty { labels, prior, coeff: entropy_coeff })
            }
            _ => None,
        };
        Ok(Self { cmmd, marginal })
    }

    fn value_and_gradient(&self, w: &[f64]) -> Result<(f64, DVector<f64>)> {
        let (mut v, mut g) = self.cmmd.value_and_gradient(w)?;
        if let Some(m) = &self.marginal {
            let (pv, pg) = m.value_and_gradient(w);
            v -= pv;
            g -= pg;
        }
        Ok((v, g))
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        let mut v = self.cmmd.value(w)?;
        if let Some(m) = &self.marginal {
            v -= m.value_and_gradient(w).0;
        }
        Ok(v)
    }
}

const MAX_HALVINGS: usize = 40;

/// Projected gradient ascent with backtracking. Steps are taken along the
/// gradient scaled to unit max-norm, `step_size * cap` at most per coordinate.
fn ascend(
    obj: &ExploitObjective,
    init: Vec<f64>,
    alpha0: f64,
    cfg: &ExploitConfig,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let cap = cap_for(alpha0, init.len())?;
    let mut w = init;
    let (mut f, mut g) = obj.value_and_gradient(&w)?;
    let mut trace = vec![f];
    for _ in 0..cfg.steps {
        let scale = g.amax();
        if !(scale > 0.0 && scale.is_finite()) {
            break;
        }
        let mut step = cfg.step_size;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let moved: Vec<f64> = w.iter().zip(g.iter()).map(|(wi, gi)| wi + step * cap * gi / scale).collect();
            let cand = project_capped_simplex(&moved, cap)?.into_vec();
            let (fc, gc) = obj.value_and_gradient(&cand)?;
            if fc.is_finite() && fc >= f {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        // vertex maximizing the linearization
        let vertex = top_mass_weights(g.as_slice(), alpha0)?.into_vec();
        let (fv, gv) = obj.value_and_gradient(&vertex)?;
        if fv.is_finite() && fv > f && accepted.as_ref().is_none_or(|a| fv > a.1) {
            accepted = Some((vertex, fv, gv));
        }
        let Some((cand, fc, gc)) = accepted else { break };
        let gain = fc - f;
        w = cand;
        f = fc;
        g = gc;
        trace.push(f);
        if gain <= cfg.tol * f.abs() {
            break;
        }
    }
    Ok((w, f, trace))
}

/// Per-sample value in `[-1, 1)` derived from the sample's content, so that
/// permuting the samples permutes the starting point the same way.
fn content_noise(seed: u64, restart: usize, phi: &DMatrix<f64>, y: &[f64], i: usize) -> f64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    restart.hash(&mut h);
    for j in 0..phi.ncols() {
        phi[(i, j)].to_bits().hash(&mut h);
    }
    y[i].to_bits().hash(&mut h);
    (h.finish() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn perturbed_start(phi: &DMatrix<f64>, y: &[f64], cap: f64, seed: u64, restart: usize) -> Result<Vec<f64>> {
    let n = y.len() as f64;
    let v: Vec<f64> = (0..y.len())
        .map(|i| (1.0 + 0.5 * content_noise(seed, restart, phi, y, i)) / n)
        .collect();
    Ok(project_capped_simplex(&v, cap)?.into_vec())
}

fn all_identical(phi: &DMatrix<f64>, y: &[f64]) -> bool {
    (1..y.len()).all(|i| y[i] == y[0] && (0..phi.ncols()).all(|j| phi[(i, j)] == phi[(0, j)]))
}

/// Worst sub-population under the weighted CMMD objective.
///
/// Starts near uniform weights (uniform is a stationary minimum of the
/// CMMD), ascends, and keeps the best of `cfg.restarts` runs. The returned
/// objective is never below its value at uniform weights.
pub fn exploit_mmd(
    phi: &DMatrix<f64>,
    y: &[f64],
    alpha0: f64,
    spec: &KernelSpec,
    cfg: &ExploitConfig,
    task: Task,
) -> Result<Exploitation> {
    exploit_mmd_from(phi, y, alpha0, spec, cfg, task, None)
}

/// [`exploit_mmd`] with an optional warm start (projected onto this `alpha0`'s
/// feasible set and used for the first restart).
pub fn exploit_mmd_from(
    phi: &DMatrix<f64>,
    y: &[f64],
    alpha0: f64,
    spec: &KernelSpec,
    cfg: &ExploitConfig,
    task: Task,
    warm: Option<&[f64]>,
) -> Result<Exploitation> {
    cfg.validate()?;
    spec.validate()?;
    let n = y.len();
    if phi.nrows() != n {
        return Err(DilError::Dimension(format!("{} rows vs {} targets", phi.nrows(), n)));
    }
    if n < 2 {
        return Err(DilError::InvalidParam("exploitation needs at least 2 samples".into()));
    }
    let cap = cap_for(alpha0, n)?;
    let uniform = SubpopWeights::uniform(n, alpha0)?;
    if let Some(w) = warm {
        if w.len() != n {
            return Err(DilError::Dimension(format!("warm start has {} weights for {n} samples", w.len())));
        }
    }
    if all_identical(phi, y) {
        warn!("all (phi, y) pairs are identical; the CMMD objective is flat, returning uniform weights");
        return Ok(Exploitation { weights: uniform, objective: 0.0, trace: vec![0.0] });
    }

    if let Some(batch) = cfg.max_batch.filter(|&b| b < n) {
        return exploit_subsampled(phi, y, alpha0, spec, cfg, task, batch, warm);
    }

    let obj = ExploitObjective::new(phi, y, task, spec, cfg.entropy_coeff)?;
    let base = obj.value(uniform.as_slice())?;
    if cfg.steps == 0 {
        return Ok(Exploitation { weights: uniform, objective: base, trace: vec![base] });
    }
    let mut best: Option<(Vec<f64>, f64, Vec<f64>)> = None;
    let mut starts = Vec::with_capacity(cfg.restarts);
    if let Some(w) = warm {
        starts.push(project_capped_simplex(w, cap)?.into_vec());
    }
    for scores in [obj.cmmd.pooled_residuals(), obj.cmmd.pooled_relative_residuals()] {
        if starts.len() < cfg.restarts {
            starts.push(top_mass_weights(&scores, alpha0)?.into_vec());
        }
    }
    for r in starts.len()..cfg.restarts {
        starts.push(perturbed_start(phi, y, cap, cfg.seed, r)?);
    }
    for start in starts {
        let run = ascend(&obj, start, alpha0, cfg)?;
        if best.as_ref().is_none_or(|b| run.1 > b.1) {
            best = Some(run);
        }
    }
    let (w, f, trace) = best.expect("restarts >= 1");
    if f < base {
        return Ok(Exploitation { weights: uniform, objective: base, trace: vec![base] });
    }
    Ok(Exploitation { weights: SubpopWeights::new(w, alpha0)?, objective: f, trace })
}

#[allow(clippy::too_many_arguments)]
fn exploit_subsampled(
    phi: &DMatrix<f64>,
    y: &[f64],
    alpha0: f64,
    spec: &KernelSpec,
    cfg: &ExploitConfig,
    task: Task,
    batch: usize,
    warm: Option<&[f64]>,
) -> Result<Exploitation> {
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, batch).into_vec();
    idx.sort_unstable();
    let sub_phi = phi.select_rows(idx.iter());
    let sub_y: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let sub_cfg = ExploitConfig { max_batch: None, ..cfg.clone() };
    let sub_warm: Option<Vec<f64>> = warm.and_then(|w| {
        let v: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
        let total: f64 = v.iter().sum();
        (total > 0.0).then(|| v.iter().map(|x| x / total).collect())
    });
    let sub = exploit_mmd_from(&sub_phi, &sub_y, alpha0, spec, &sub_cfg, task, sub_warm.as_deref())?;

    // nearest subsample point in (phi, y) space
    let scale = batch as f64 / n as f64;
    let extended: Vec<f64> = (0..n)
        .map(|i| {
            let mut best = (f64::INFINITY, 0usize);
            for (s, &j) in idx.iter().enumerate() {
                let mut d = (y[i] - y[j]).powi(2);
                for c in 0..phi.ncols() {
                    d += (phi[(i, c)] - phi[(j, c)]).powi(2);
                }
                if d < best.0 {
                    best = (d, s);
                }
            }
            sub.weights.as_slice()[best.1] * scale
        })
        .collect();
    let weights = project_capped_simplex(&extended, cap_for(alpha0, n)?)?;
    let obj = ExploitObjective::new(phi, y, task, spec, cfg.entropy_coeff)?;
    let objective = obj.value(weights.as_slice())?;
    Ok(Exploitation { weights: SubpopWeights::new(weights.into_vec(), alpha0)?, objective, trace: sub.trace })
}
