use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Samples;
use crate::error::{DilError, Result};
use crate::models::Task;

/// Draws inspected per stall check; a window with no acceptance aborts.
const STALL_WINDOW: u64 = 1_000_000;
const MIN_ACCEPT_RATE: f64 = 1e-6;

/// Seeded generator for one environment: `seed` picks the key, `stream` the
/// independent ChaCha stream, so environments never share draws.
pub fn env_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Regression with selection bias on one variant coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionBiasSpec {
    pub n: usize,
    /// Bias ratio, `|r| > 1`; the sign sets the direction of the `V_b`-`Y` correlation.
    pub r: f64,
    pub n_s: usize,
    pub n_v: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub stream: u64,
}

impl Default for SelectionBiasSpec {
    fn default() -> Self {
        Self { n: 2000, r: 1.5, n_s: 5, n_v: 5, noise_sd: 1.0, seed: 0, stream: 0 }
    }
}

/// Coefficients on the stable block: `[0.5, -1, 1, -0.5, 1, -1, 1, ...]`.
pub fn stable_coefficients(n_s: usize) -> Vec<f64> {
    (0..n_s)
        .map(|i| match i {
            0 => 0.5,
            3 => -0.5,
            _ if i % 2 == 0 => 1.0,
            _ => -1.0,
        })
        .collect()
}

impl SelectionBiasSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r.abs() > 1.0 && self.r.is_finite()) {
            return Err(DilError::InvalidParam(format!("selection bias needs |r| > 1, got {}", self.r)));
        }
        if self.n == 0 {
            return Err(DilError::InvalidParam("n must be positive".into()));
        }
        if self.n_s < 3 || self.n_v < 1 {
            return Err(DilError::InvalidParam(format!(
                "need n_s >= 3 and n_v >= 1, got n_s = {}, n_v = {}",
                self.n_s, self.n_v
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(DilError::InvalidParam("noise_sd must be >= 0".into()));
        }
        Ok(())
    }
}

/// Rejection-sample `spec.n` points `x = [S, V]`, `Y = theta^T S + S1 S2 S3 + eps`,
/// keeping each with probability `|r|^(-5 |y - sign(r) V_1|)`.
pub fn gen_selection_bias(spec: &SelectionBiasSpec) -> Result<Samples> {
    spec.validate()?;
    let mut rng = env_rng(spec.seed, spec.stream);
    let latent = Normal::new(0.0, 2.0f64.sqrt()).expect("valid normal");
    let noise = Normal::new(0.0, spec.noise_sd).expect("valid normal");
    let theta = stable_coefficients(spec.n_s);
    let (n_s, n_v) = (spec.n_s, spec.n_v);
    let sign = spec.r.signum();
    let log_r = spec.r.abs().ln();

    let d = n_s + n_v;
    let mut x = DMatrix::<f64>::zeros(spec.n, d);
    let mut y = Vec::with_capacity(spec.n);
    let mut z = vec![0.0; n_s + 1];
    let mut row = vec![0.0; d];
    let (mut draws, mut window_accepts) = (0u64, 0u64);
    while y.len() < spec.n {
        z.iter_mut().for_each(|v| *v = latent.sample(&mut rng));
        for i in 0..n_s {
            row[i] = 0.8 * z[i] + 0.2 * z[i + 1];
        }
        for j in 0..n_v {
            row[n_s + j] = latent.sample(&mut rng);
        }
        let s = &row[..n_s];
        let target = theta.iter().zip(s).map(|(t, v)| t * v).sum::<f64>() + s[0] * s[1] * s[2] + noise.sample(&mut rng);
        let accept = (-5.0 * (target - sign * row[n_s]).abs() * log_r).exp();
        draws += 1;
        if rng.random::<f64>() < accept {
            let i = y.len();
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
            y.push(target);
            window_accepts += 1;
        }
        if draws % STALL_WINDOW == 0 {
            let rate = window_accepts as f64 / STALL_WINDOW as f64;
            if rate < MIN_ACCEPT_RATE {
                return Err(DilError::AcceptanceStalled { rate, draws, r: spec.r });
            }
            window_accepts = 0;
        }
    }
    Ok(Samples { x, y, task: Task::Regression })
}

/// Binary classification with a spurious attribute `A` that agrees with the
/// label with probability `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpuriousClassSpec {
    pub n: usize,
    /// `P(A = Y)`, in `[0, 1]`.
    pub r: f64,
    /// Dimension of each of the `S` and `V` blocks.
    pub d: usize,
    pub sigma_s_sq: f64,
    pub sigma_v_sq: f64,
    pub seed: u64,
    pub stream: u64,
}

impl Default for SpuriousClassSpec {
    fn default() -> Self {
        Self { n: 1000, r: 0.9, d: 5, sigma_s_sq: 9.0, sigma_v_sq: 0.09, seed: 0, stream: 0 }
    }
}

impl SpuriousClassSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(DilError::InvalidParam(format!("bias rate r must lie in [0, 1], got {}", self.r)));
        }
        if self.n == 0 || self.d == 0 {
            return Err(DilError::InvalidParam("n and d must be positive".into()));
        }
        if !(self.sigma_s_sq > 0.0 && self.sigma_v_sq > 0.0) {
            return Err(DilError::InvalidParam("variances must be positive".into()));
        }
        Ok(())
    }
}

/// Samples from [`gen_spurious_classification`] with the hidden attribute kept
/// alongside for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SpuriousDraw {
    pub samples: Samples,
    /// Whether `A == Y` for each row.
    pub agrees: Vec<bool>,
}

/// `x = [S, V]` with `S | Y ~ N(Y 1, sigma_s^2 I)` and `V | A ~ N(A 1, sigma_v^2 I)`.
/// Labels are stored as classes `{0, 1}` for `Y = {-1, +1}`.
pub fn gen_spurious_classification(spec: &SpuriousClassSpec) -> Result<SpuriousDraw> {
    spec.validate()?;
    let mut rng = env_rng(spec.seed, spec.stream);
    let s_noise = Normal::new(0.0, spec.sigma_s_sq.sqrt()).expect("valid normal");
    let v_noise = Normal::new(0.0, spec.sigma_v_sq.sqrt()).expect("valid normal");
    let d = spec.d;
    let mut x = DMatrix::<f64>::zeros(spec.n, 2 * d);
    let mut y = Vec::with_capacity(spec.n);
    let mut agree = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let same = rng.random::<f64>() < spec.r;
        let attr = if same { label } else { -label };
        for j in 0..d {
            x[(i, j)] = label + s_noise.sample(&mut rng);
        }
        for j in 0..d {
            x[(i, d + j)] = attr + v_noise.sample(&mut rng);
        }
        y.push(if label > 0.0 { 1.0 } else { 0.0 });
        agree.push(same);
    }
    Ok(SpuriousDraw { samples: Samples { x, y, task: Task::Classification { classes: 2 } }, agrees: agree })
}

/// One-dimensional toy where a planted minority follows `y = -phi` and the
/// rest `y = phi`, with `phi ~ U(-2, 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedFlip {
    pub samples: Samples,
    pub flipped: Vec<bool>,
}

impl PlantedFlip {
    pub fn flipped_indices(&self) -> Vec<usize> {
        self.flipped.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect()
    }
}

/// `round(fraction * n)` points, chosen uniformly, carry the flipped relation.
pub fn gen_planted_flip(n: usize, fraction: f64, seed: u64) -> Result<PlantedFlip> {
    if n == 0 || !(0.0..=1.0).contains(&fraction) {
        return Err(DilError::InvalidParam(format!("need n > 0 and fraction in [0, 1], got {n}, {fraction}")));
    }
    let mut rng = env_rng(seed, 0);
    let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let k = (fraction * n as f64).round() as usize;
    let mut flipped = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        flipped[i] = true;
    }
    let y = phi.iter().zip(&flipped).map(|(&p, &f)| if f { -p } else { p }).collect();
    Ok(PlantedFlip { samples: Samples { x: DMatrix::from_vec(n, 1, phi), y, task: Task::Regression }, flipped })
}
