//! Synthetic shift benchmarks and CSV persistence.

mod generators;
mod io;

pub use generators::{
    env_rng, gen_planted_flip, gen_selection_bias, gen_spurious_classification, stable_coefficients, PlantedFlip, SelectionBiasSpec,
    SpuriousClassSpec, SpuriousDraw,
};
pub use io::{load_csv, save_csv};

use nalgebra::DMatrix;

use crate::error::{DilError, Result};
use crate::models::Task;

/// Features and targets: everything a learner is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: DMatrix<f64>,
    /// Real targets (regression) or class indices stored as `f64`.
    pub y: Vec<f64>,
    pub task: Task,
}

impl Samples {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, task: Task) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(DilError::Dimension(format!("{} rows vs {} targets", x.nrows(), y.len())));
        }
        crate::kernels::check_finite(&x)?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(DilError::NonFinite { row: i, col: x.ncols() });
        }
        Ok(Self { x, y, task })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Samples) -> Result<Samples> {
        if self.task != other.task || self.dim() != other.dim() {
            return Err(DilError::Dimension("cannot concatenate samples of different shape or task".into()));
        }
        let (n, m) = (self.len(), other.len());
        let x = DMatrix::from_fn(n + m, self.dim(), |i, j| if i < n { self.x[(i, j)] } else { other.x[(i - n, j)] });
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(Samples { x, y, task: self.task })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Samples {
        Samples {
            x: self.x.select_rows(idx.iter()),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            task: self.task,
        }
    }

    /// Restrict to a subset of feature columns.
    pub fn select_columns(&self, cols: &[usize]) -> Samples {
        Samples { x: self.x.select_columns(cols.iter()), y: self.y.clone(), task: self.task }
    }
}

/// Samples plus optional evaluation-only environment tags. Learners take
/// [`Samples`], so the tags cannot leak into training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Samples,
    pub env: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(samples: Samples, env: Option<Vec<u32>>) -> Result<Self> {
        if let Some(e) = &env {
            if e.len() != samples.len() {
                return Err(DilError::Dimension(format!("{} env tags for {} rows", e.len(), samples.len())));
            }
        }
        Ok(Self { samples, env })
    }

    fn single(samples: Samples, tag: u32) -> Self {
        let env = Some(vec![tag; samples.len()]);
        Self { samples, env }
    }

    /// Rows of `self` followed by rows of `other`; tags are kept when both carry them.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let samples = self.samples.concat(&other.samples)?;
        let env = match (&self.env, &other.env) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Dataset { samples, env })
    }
}

/// A named test environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TestEnv {
    pub name: String,
    pub data: Dataset,
}

/// Pooled training set plus held-out test environments.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub train: Dataset,
    pub tests: Vec<TestEnv>,
}

pub const REGRESSION_MINORITY_R: f64 = -1.1;
pub const REGRESSION_TEST_RS: [f64; 6] = [-1.9, -2.1, -2.3, -2.5, -2.7, -2.9];
pub const CLASSIFICATION_MAJORITY_R: f64 = 0.9;
pub const CLASSIFICATION_TEST_R: f64 = 0.0;

/// Selection-bias suite: 2000 points at `r1` (env 0) and 200 at `r = -1.1`
/// (env 1) for training; 1000 points at each `r` in `{-1.9, ..., -2.9}` for testing.
pub fn regression_suite(r1: f64, seed: u64) -> Result<Suite> {
    regression_suite_sized(r1, seed, 2000, 200, 1000)
}

pub fn regression_suite_sized(r1: f64, seed: u64, n_major: usize, n_minor: usize, n_test: usize) -> Result<Suite> {
    let spec = |n, r, stream| SelectionBiasSpec { n, r, seed, stream, ..Default::default() };
    let major = Dataset::single(gen_selection_bias(&spec(n_major, r1, 0))?, 0);
    let minor = Dataset::single(gen_selection_bias(&spec(n_minor, REGRESSION_MINORITY_R, 1))?, 1);
    let tests = REGRESSION_TEST_RS
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let data = Dataset::single(gen_selection_bias(&spec(n_test, r, 2 + k as u64))?, 2 + k as u32);
            Ok(TestEnv { name: format!("test_r{r:.1}"), data })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Suite { train: major.concat(&minor)?, tests })
}

/// Spurious-correlation suite: 1000 points at `r = 0.9` (env 0) and 1000 at
/// `r2` (env 1) for training; 1000 points at `r = 0` for testing.
pub fn classification_suite(d: usize, r2: f64, seed: u64) -> Result<Suite> {
    classification_suite_sized(d, r2, seed, 1000, 1000)
}

pub fn classification_suite_sized(d: usize, r2: f64, seed: u64, n_per_group: usize, n_test: usize) -> Result<Suite> {
    let spec = |n, r, stream| SpuriousClassSpec { n, r, d, seed, stream, ..Default::default() };
    let a = Dataset::single(gen_spurious_classification(&spec(n_per_group, CLASSIFICATION_MAJORITY_R, 0))?.samples, 0);
    let b = Dataset::single(gen_spurious_classification(&spec(n_per_group, r2, 1))?.samples, 1);
    let test = Dataset::single(gen_spurious_classification(&spec(n_test, CLASSIFICATION_TEST_R, 2))?.samples, 2);
    Ok(Suite {
        train: a.concat(&b)?,
        tests: vec![TestEnv { name: format!("test_r{CLASSIFICATION_TEST_R:.1}"), data: test }],
    })
}
