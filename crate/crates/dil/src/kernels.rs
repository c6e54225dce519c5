//! Kernels, Gram matrices, MMD and the weighted conditional MMD.
//!
//! The conditional embedding of a sub-population given by sample weights `w`
//! is the operator
//!
//! ```text
//! C^w = Y S (S Kx S + beta I)^-1 S Psi^T,   S = diag(sqrt(w))
//! ```
//!
//! and the reference embedding is the same formula at uniform weights, so
//! `cmmd_sq(uniform) == 0` for every kernel and `beta`. Writing
//! `M(w) = S (S Kx S + beta I)^-1 S` and `D = M(w) - M(uniform)`, the squared
//! Hilbert-Schmidt distance is `Tr(D Ky D Kx)`.
//!
//! Every solve goes through a Cholesky factorization of the symmetric matrix
//! `S Kx S + beta I`; no inverse is ever formed.

use faer::prelude::*;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DilError, Result};
use crate::models::Task;

/// Kernel family with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(-gamma * |a - b|^2)`
    Rbf { gamma: f64 },
    /// `<a, b>`
    Linear,
    /// `(<a, b> + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
}

/// A kernel together with the embedding regularization `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub beta: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, beta: f64) -> Result<Self> {
        let spec = Self { family, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf(gamma: f64, beta: f64) -> Result<Self> {
        Self::new(KernelFamily::Rbf { gamma }, beta)
    }

    pub fn linear(beta: f64) -> Result<Self> {
        Self::new(KernelFamily::Linear, beta)
    }

    pub fn polynomial(degree: u32, offset: f64, beta: f64) -> Result<Self> {
        Self::new(KernelFamily::Polynomial { degree, offset }, beta)
    }

    /// RBF kernel with the bandwidth set by the median heuristic on `x`.
    pub fn rbf_median(x: &DMatrix<f64>, beta: f64) -> Result<Self> {
        check_finite(x)?;
        Self::rbf(median_gamma(x), beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(DilError::InvalidParam(format!("beta must be positive, got {}", self.beta)));
        }
        match self.family {
            KernelFamily::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                DilError::InvalidParam(format!("rbf gamma must be positive, got {gamma}")),
            ),
            KernelFamily::Polynomial { degree: 0, .. } => {
                Err(DilError::InvalidParam("polynomial degree must be >= 1".into()))
            }
            KernelFamily::Polynomial { offset, .. } if !offset.is_finite() => {
                Err(DilError::InvalidParam("polynomial offset must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Kernel value between two rows.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            KernelFamily::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelFamily::Polynomial { degree, offset } => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (dot + offset).powi(degree as i32)
            }
        }
    }
}

/// How the kernel is chosen for a representation that changes during training.
///
/// `gamma = None` selects the median heuristic on each representation.
/// `standardize` rescales every column to zero mean and unit variance before
/// the kernel sees it, so that no block of features dominates by scale alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub family: KernelKind,
    pub gamma: Option<f64>,
    pub degree: u32,
    pub offset: f64,
    pub beta: f64,
    pub standardize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Linear,
    Polynomial,
}

/// Embedding regularization applied to the weighted Gram `S Kx S`, whose
/// spectrum is `O(1)` for any `N`; at uniform weights this equals `N * beta`
/// on the raw Gram.
pub const DEFAULT_BETA: f64 = 0.3;

impl Default for KernelConfig {
    fn default() -> Self {
        Self { family: KernelKind::Rbf, gamma: None, degree: 2, offset: 1.0, beta: DEFAULT_BETA, standardize: false }
    }
}

impl KernelConfig {
    pub fn resolve(&self, phi: &DMatrix<f64>) -> Result<KernelSpec> {
        match self.family {
            KernelKind::Rbf => match self.gamma {
                Some(g) => KernelSpec::rbf(g, self.beta),
                None => KernelSpec::rbf_median(phi, self.beta),
            },
            KernelKind::Linear => KernelSpec::linear(self.beta),
            KernelKind::Polynomial => KernelSpec::polynomial(self.degree, self.offset, self.beta),
        }
    }

    /// The features the kernel is evaluated on, and the resolved kernel.
    pub fn prepare(&self, phi: &DMatrix<f64>) -> Result<(DMatrix<f64>, KernelSpec)> {
        let phi = if self.standardize { standardize_columns(phi) } else { phi.clone() };
        let spec = self.resolve(&phi)?;
        Ok((phi, spec))
    }
}

/// Columns shifted to mean zero and scaled to unit (population) variance.
/// Constant columns become zero.
pub fn standardize_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = x.clone();
    let n = x.nrows().max(1) as f64;
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / n;
        let var = x.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 { var.sqrt().recip() } else { 0.0 };
        for v in z.column_mut(j).iter_mut() {
            *v = (*v - mean) * scale;
        }
    }
    z
}

pub(crate) fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            if !x[(i, j)].is_finite() {
                return Err(DilError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// `1 / median(|x_i - x_j|^2)` over distinct pairs; 1.0 when all points coincide.
pub fn median_gamma(x: &DMatrix<f64>) -> f64 {
    let r = rows(x);
    let n = r.len();
    let mut d2 = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d2.push(r[i].iter().zip(&r[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        }
    }
    if d2.is_empty() {
        return 1.0;
    }
    let mid = d2.len() / 2;
    let (_, m, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        1.0 / *m
    } else {
        1.0
    }
}

/// Gram matrix `K[i, j] = k(x_i, x_j)`.
pub fn gram(x: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    cross_gram(x, x, spec)
}

/// Cross Gram matrix `K[i, j] = k(x_i, z_j)`.
pub fn cross_gram(x: &DMatrix<f64>, z: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if x.nrows() == 0 || z.nrows() == 0 {
        return Err(DilError::Empty("gram needs at least one sample"));
    }
    if x.ncols() != z.ncols() {
        return Err(DilError::Dimension(format!("{} vs {} feature columns", x.ncols(), z.ncols())));
    }
    check_finite(x)?;
    check_finite(z)?;
    let (rx, rz) = (rows(x), rows(z));
    let symmetric = std::ptr::eq(x, z);
    let mut k = DMatrix::zeros(rx.len(), rz.len());
    for i in 0..rx.len() {
        let start = if symmetric { i } else { 0 };
        for j in start..rz.len() {
            let v = spec.eval(&rx[i], &rz[j]);
            k[(i, j)] = v;
            if symmetric {
                k[(j, i)] = v;
            }
        }
    }
    Ok(k)
}

/// Squared MMD between the empirical mean embeddings of `x` and `z`.
pub fn mmd_sq(x: &DMatrix<f64>, z: &DMatrix<f64>, spec: &KernelSpec) -> Result<f64> {
    if x.nrows() == 0 || z.nrows() == 0 {
        return Err(DilError::Empty("mmd needs non-empty sample sets"));
    }
    let kxx = gram(x, spec)?.mean();
    let kzz = gram(z, spec)?.mean();
    let kxz = cross_gram(x, z, spec)?.mean();
    Ok(kxx - 2.0 * kxz + kzz)
}

/// Feature matrix of the target kernel: the identity feature for regression,
/// one-hot rows for classification, each column centered on its sample mean.
/// `Ky = F F^T`. Centering makes a constant target embed to zero, so that it
/// carries no conditional discrepancy whatever the regularization.
pub fn target_features(y: &[f64], task: Task) -> Result<DMatrix<f64>> {
    let mut f = raw_target_features(y, task)?;
    for mut col in f.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    Ok(f)
}

fn raw_target_features(y: &[f64], task: Task) -> Result<DMatrix<f64>> {
    match task {
        Task::Regression => {
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(DilError::NonFinite { row: i, col: 0 });
            }
            Ok(DMatrix::from_column_slice(y.len(), 1, y))
        }
        Task::Classification { classes } => {
            let mut f = DMatrix::zeros(y.len(), classes);
            for (i, &label) in y.iter().enumerate() {
                let c = class_index(label, classes)
                    .ok_or_else(|| DilError::InvalidParam(format!("row {i}: label {label} not in [0, {classes})")))?;
                f[(i, c)] = 1.0;
            }
            Ok(f)
        }
    }
}

pub(crate) fn class_index(label: f64, classes: usize) -> Option<usize> {
    (label >= 0.0 && label.fract() == 0.0 && (label as usize) < classes).then_some(label as usize)
}

/// Gram matrices of representations and targets.
#[derive(Debug, Clone)]
pub struct GramPair {
    pub kx: DMatrix<f64>,
    pub ky: DMatrix<f64>,
}

impl GramPair {
    pub fn new(kx: DMatrix<f64>, ky: DMatrix<f64>) -> Result<Self> {
        let n = kx.nrows();
        if n == 0 {
            return Err(DilError::Empty("gram pair"));
        }
        if kx.ncols() != n || ky.nrows() != n || ky.ncols() != n {
            return Err(DilError::Dimension(format!(
                "grams must both be {n}x{n}, got {}x{} and {}x{}",
                kx.nrows(),
                kx.ncols(),
                ky.nrows(),
                ky.ncols()
            )));
        }
        for (name, m) in [("Kx", &kx), ("Ky", &ky)] {
            for i in 0..n {
                for j in (i + 1)..n {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                        return Err(DilError::InvalidParam(format!("{name} is not symmetric at ({i}, {j})")));
                    }
                }
            }
        }
        Ok(Self { kx, ky })
    }

    /// Grams of a representation under `spec` and of targets under the task's target kernel.
    pub fn from_data(phi: &DMatrix<f64>, y: &[f64], task: Task, spec: &KernelSpec) -> Result<Self> {
        if phi.nrows() != y.len() {
            return Err(DilError::Dimension(format!("{} rows vs {} targets", phi.nrows(), y.len())));
        }
        let f = target_features(y, task)?;
        Self::new(gram(phi, spec)?, &f * f.transpose())
    }

    pub fn len(&self) -> usize {
        self.kx.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.kx.nrows() == 0
    }
}

/// Cholesky factorization of `S Kx S + beta I` for one weight vector.
pub(crate) struct WeightedSolve {
    sqrt_w: Vec<f64>,
    chol: faer::linalg::solvers::Cholesky<f64>,
}

impl WeightedSolve {
    pub(crate) fn new(kx: &DMatrix<f64>, w: &[f64], beta: f64) -> Result<Self> {
        let n = kx.nrows();
        if w.len() != n {
            return Err(DilError::Dimension(format!("{} weights for {n} samples", w.len())));
        }
        if let Some(i) = w.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(DilError::InvalidParam(format!("weight {i} is {} (must be finite and >= 0)", w[i])));
        }
        let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let a = faer::Mat::<f64>::from_fn(n, n, |i, j| {
            let v = sqrt_w[i] * kx[(i, j)] * sqrt_w[j];
            if i == j {
                v + beta
            } else {
                v
            }
        });
        let chol = a.cholesky(faer::Side::Lower).map_err(|_| {
            let trace: f64 = (0..n).map(|i| w[i] * kx[(i, i)]).sum();
            DilError::Singular { condition: (trace.abs() + beta) / beta }
        })?;
        Ok(Self { sqrt_w, chol })
    }

    /// `M V = S A^-1 S V`, as one multi-right-hand-side solve.
    pub(crate) fn apply_mat(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.sqrt_w.len();
        let rhs = faer::Mat::<f64>::from_fn(n, v.ncols(), |i, j| self.sqrt_w[i] * v[(i, j)]);
        let sol = self.chol.solve(&rhs);
        DMatrix::from_fn(n, v.ncols(), |i, j| self.sqrt_w[i] * sol.read(i, j))
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_weights(w: &[f64], grams: &GramPair, beta: f64) -> Result<()> {
    if w.len() != grams.len() {
        return Err(DilError::Dimension(format!("{} weights for {} samples", w.len(), grams.len())));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(DilError::InvalidParam(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // Tr(A B) = sum_ij A_ij B_ji
    a.component_mul(&b.transpose()).sum()
}

/// Squared weighted CMMD between the sub-population `w` and the uniform reference.
///
/// Evaluated through the trace form
/// `Tr((M - 2 M0) Ky M Kx) + Tr(M0 Ky M0 Kx)` with `M0 = M(uniform)`.
pub fn cmmd_sq(w: &[f64], grams: &GramPair, beta: f64) -> Result<f64> {
    check_weights(w, grams, beta)?;
    let n = grams.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let m = WeightedSolve::new(&grams.kx, w, beta)?.apply_mat(&eye);
    let m0 = WeightedSolve::new(&grams.kx, &uniform(n), beta)?.apply_mat(&eye);
    let ky_m_kx = &grams.ky * &m * &grams.kx;
    let ky_m0_kx = &grams.ky * &m0 * &grams.kx;
    Ok(trace_of_product(&(&m - &m0 * 2.0), &ky_m_kx) + trace_of_product(&m0, &ky_m0_kx))
}

/// Analytic gradient of [`cmmd_sq`] with respect to the weights.
///
/// With `Q = I - Kx M` and `G = Ky D Kx`, `d cmmd / d w_i = (2 / beta) (Q G Q^T)_ii`.
pub fn cmmd_weight_gradient(w: &[f64], grams: &GramPair, beta: f64) -> Result<DVector<f64>> {
    check_weights(w, grams, beta)?;
    let n = grams.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let m = WeightedSolve::new(&grams.kx, w, beta)?.apply_mat(&eye);
    let m0 = WeightedSolve::new(&grams.kx, &uniform(n), beta)?.apply_mat(&eye);
    let d = &m - &m0;
    let g = &grams.ky * &d * &grams.kx;
    let q = &eye - &grams.kx * &m;
    let qg = &q * &g;
    Ok(DVector::from_fn(n, |i, _| {
        2.0 / beta * (0..n).map(|k| qg[(i, k)] * q[(i, k)]).sum::<f64>()
    }))
}

/// Central finite-difference gradient of [`cmmd_sq`]; a verification path only.
pub fn cmmd_weight_gradient_fd(w: &[f64], grams: &GramPair, beta: f64, step: f64) -> Result<DVector<f64>> {
    check_weights(w, grams, beta)?;
    let mut out = DVector::zeros(w.len());
    let mut probe = w.to_vec();
    for i in 0..w.len() {
        let h = step.min(w[i]).max(0.0);
        let (lo, hi) = (w[i] - h, w[i] + step);
        probe[i] = hi;
        let f_hi = cmmd_sq(&probe, grams, beta)?;
        probe[i] = lo;
        let f_lo = cmmd_sq(&probe, grams, beta)?;
        probe[i] = w[i];
        out[i] = (f_hi - f_lo) / (hi - lo);
    }
    Ok(out)
}

/// Weighted CMMD specialised to a low-rank target kernel `Ky = F F^T`.
///
/// Regression (one column) and classification (one column per class) targets
/// both have this form, which brings a value-and-gradient evaluation down to
/// one factorization plus `O(N^2 r)` work. Agrees with [`cmmd_sq`] and
/// [`cmmd_weight_gradient`].
#[derive(Debug, Clone)]
pub struct CmmdObjective {
    kx: DMatrix<f64>,
    features: DMatrix<f64>,
    beta: f64,
    reference: DMatrix<f64>,
}

impl CmmdObjective {
    pub fn new(kx: DMatrix<f64>, features: DMatrix<f64>, beta: f64) -> Result<Self> {
        let n = kx.nrows();
        if n == 0 {
            return Err(DilError::Empty("cmmd objective"));
        }
        if kx.ncols() != n || features.nrows() != n {
            return Err(DilError::Dimension(format!(
                "Kx is {}x{}, features have {} rows",
                kx.nrows(),
                kx.ncols(),
                features.nrows()
            )));
        }
        let reference = WeightedSolve::new(&kx, &uniform(n), beta)?.apply_mat(&features);
        Ok(Self { kx, features, beta, reference })
    }

    pub fn from_data(phi: &DMatrix<f64>, y: &[f64], task: Task, spec: &KernelSpec) -> Result<Self> {
        if phi.nrows() != y.len() {
            return Err(DilError::Dimension(format!("{} rows vs {} targets", phi.nrows(), y.len())));
        }
        Self::new(gram(phi, spec)?, target_features(y, task)?, spec.beta)
    }

    pub fn len(&self) -> usize {
        self.kx.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.kx.nrows() == 0
    }

    pub fn kx(&self) -> &DMatrix<f64> {
        &self.kx
    }

    /// `||upsilon(y_i) - C psi(x_i)||^2` under the pooled (uniform-weight)
    /// embedding: how badly the pooled conditional explains each sample.
    pub fn pooled_residuals(&self) -> Vec<f64> {
        let r = &self.features - &self.kx * &self.reference;
        r.row_iter().map(|row| row.norm_squared()).collect()
    }

    /// [`Self::pooled_residuals`] divided by `||upsilon(y_i)||^2 + ||C psi(x_i)||^2`,
    /// which makes them insensitive to the target's magnitude.
    pub fn pooled_relative_residuals(&self) -> Vec<f64> {
        let fitted = &self.kx * &self.reference;
        let r = &self.features - &fitted;
        (0..self.len())
            .map(|i| {
                let scale = self.features.row(i).norm_squared() + fitted.row(i).norm_squared();
                if scale > 0.0 {
                    r.row(i).norm_squared() / scale
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn residual(&self, solve: &WeightedSolve) -> DMatrix<f64> {
        solve.apply_mat(&self.features) - &self.reference
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        let solve = WeightedSolve::new(&self.kx, w, self.beta)?;
        let a = self.residual(&solve);
        let ka = &self.kx * &a;
        Ok(a.component_mul(&ka).sum())
    }

    pub fn value_and_gradient(&self, w: &[f64]) -> Result<(f64, DVector<f64>)> {
        let solve = WeightedSolve::new(&self.kx, w, self.beta)?;
        let a = self.residual(&solve);
        let b = &self.kx * &a;
        let value = a.component_mul(&b).sum();
        // Q F = F - Kx M F, Q B = B - Kx M B
        let mf = &a + &self.reference;
        let qf = &self.features - &self.kx * mf;
        let qb = &b - &self.kx * solve.apply_mat(&b);
        let grad = DVector::from_fn(self.len(), |i, _| {
            2.0 / self.beta * qf.row(i).component_mul(&qb.row(i)).sum()
        });
        Ok((value, grad))
    }
}
