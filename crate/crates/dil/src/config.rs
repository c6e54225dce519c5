//! Run configuration files.
//!
//! A config is TOML. `seed` is required; everything else falls back to the
//! chosen preset. The file is merged key by key over the preset and then
//! parsed strictly, so misspelled keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineMethod};
use crate::error::{DilError, Result};
use crate::exploit::ExploitConfig;
use crate::kernels::{KernelConfig, KernelKind};
use crate::models::Task;
use crate::trainer::{ArchKind, DilConfig, ModelConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Regression,
    Classification,
}

impl Preset {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => Preset::Regression,
            Task::Classification { .. } => Preset::Classification,
        }
    }
}

/// Settings shared by the ERM and DRO baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub model: ModelConfig,
    pub dro_alpha0: f64,
}

impl BaselineSettings {
    pub fn config(&self, method: BaselineMethod, seed: u64) -> BaselineConfig {
        BaselineConfig {
            method,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
            model: self.model.clone(),
        }
    }

    pub fn erm(&self, seed: u64) -> BaselineConfig {
        self.config(BaselineMethod::Erm, seed)
    }

    pub fn dro(&self, seed: u64) -> BaselineConfig {
        self.config(BaselineMethod::Dro { alpha0: self.dro_alpha0 }, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    pub alpha0: f64,
    pub kernel: KernelConfig,
    pub exploit: ExploitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub alphas: Vec<f64>,
    /// Outer iterations and epochs for DIL during the sweep.
    pub outer_iters: usize,
    pub inner_epochs: usize,
    /// DRO epochs during the sweep.
    pub epochs: usize,
}

/// Everything a command may need. Serializes to the effective config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    pub dil: DilConfig,
    pub baseline: BaselineSettings,
    pub probe: ProbeSettings,
    pub sweep: SweepSettings,
}

/// Grid `0.05, 0.10, ..., 0.50`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 * 0.05).collect()
}

impl RunConfig {
    /// Defaults for `preset` with the given seed.
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let exploit = ExploitConfig { max_batch: Some(512), seed, ..Default::default() };
        let probe = ProbeSettings { alpha0: 0.15, kernel: KernelConfig::default(), exploit: ExploitConfig { restarts: 4, max_batch: Some(512), seed, ..Default::default() } };
        let sweep = SweepSettings { alphas: default_alpha_grid(), outer_iters: 1, inner_epochs: 1000, epochs: 1000 };
        match preset {
            Preset::Regression => {
                let model = ModelConfig { architecture: ArchKind::Linear, hidden: 16 };
                Self {
                    seed,
                    preset,
                    dil: DilConfig {
                        alpha0: 0.1,
                        lambda: 0.2,
                        variant: Variant::Kl,
                        model: model.clone(),
                        kernel: KernelConfig { family: KernelKind::Linear, ..Default::default() },
                        exploit,
                        seed,
                        ..Default::default()
                    },
                    baseline: BaselineSettings { epochs: 2500, learning_rate: 0.05, model, dro_alpha0: 0.1 },
                    probe: ProbeSettings { alpha0: 0.1, ..probe },
                    sweep,
                }
            }
            Preset::Classification => {
                let model = ModelConfig { architecture: ArchKind::Mlp2, hidden: 16 };
                Self {
                    seed,
                    preset,
                    dil: DilConfig {
                        alpha0: 0.15,
                        lambda: CLASSIFICATION_LAMBDA,
                        outer_iters: 1,
                        inner_epochs: 2500,
                        variant: Variant::Mmd,
                        model: model.clone(),
                        kernel: KernelConfig { standardize: true, ..Default::default() },
                        exploit,
                        seed,
                        ..Default::default()
                    },
                    baseline: BaselineSettings { epochs: 2500, learning_rate: 0.05, model, dro_alpha0: 0.15 },
                    probe,
                    sweep,
                }
            }
        }
    }

    /// Parse TOML text. `fallback` picks the preset when the file names none.
    pub fn from_toml_str(text: &str, fallback: Preset) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| DilError::Config(e.message().to_string()))?;
        let seed = match user.get("seed") {
            Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(other) => return Err(DilError::Config(format!("seed must be a non-negative integer, got {other}"))),
            None => return Err(DilError::Config("missing required key `seed`".into())),
        };
        // nested seeds exist only so that echoed configs parse back; they must agree
        for path in [&["dil", "seed"][..], &["dil", "exploit", "seed"], &["probe", "exploit", "seed"]] {
            let mut node = Some(&user);
            for key in &path[..path.len() - 1] {
                node = node.and_then(|t| t.get(*key)).and_then(toml::Value::as_table);
            }
            if let Some(v) = node.and_then(|t| t.get(path[path.len() - 1])) {
                if v.as_integer() != Some(seed as i64) {
                    return Err(DilError::Config(format!("`{}` must equal the top-level seed", path.join("."))));
                }
            }
        }
        let preset = match user.get("preset") {
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| DilError::Config(format!("preset: {}", e.message())))?,
            None => fallback,
        };
        let base = toml::Table::try_from(Self::preset(preset, seed)).map_err(|e| DilError::Config(e.to_string()))?;
        let merged = merge(base, user);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| DilError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, fallback: Preset) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| DilError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, fallback)
    }

    pub fn validate(&self) -> Result<()> {
        self.dil.validate()?;
        self.baseline.erm(self.seed).validate()?;
        self.baseline.dro(self.seed).validate()?;
        self.probe.exploit.validate()?;
        if !(self.probe.alpha0 > 0.0 && self.probe.alpha0 <= 1.0) {
            return Err(DilError::Config(format!("probe.alpha0 must lie in (0, 1], got {}", self.probe.alpha0)));
        }
        if self.sweep.alphas.iter().any(|a| !(*a > 0.0 && *a <= 0.5)) {
            return Err(DilError::Config("sweep.alphas must lie in (0, 0.5]".into()));
        }
        if self.sweep.outer_iters == 0 || self.sweep.inner_epochs == 0 || self.sweep.epochs == 0 {
            return Err(DilError::Config("sweep iteration counts must be positive".into()));
        }
        Ok(())
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DilError::Config(e.to_string()))
    }

    /// DIL settings used for each sweep cell.
    pub fn sweep_dil(&self) -> DilConfig {
        DilConfig { outer_iters: self.sweep.outer_iters, inner_epochs: self.sweep.inner_epochs, ..self.dil.clone() }
    }

    /// DRO settings used for each sweep cell (`alpha0` is replaced per cell).
    pub fn sweep_dro(&self) -> BaselineConfig {
        BaselineConfig { epochs: self.sweep.epochs, ..self.baseline.dro(self.seed) }
    }
}

/// Preset weight of the invariance penalty for classification.
pub const CLASSIFICATION_LAMBDA: f64 = 30.0;

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required() {
        let err = RunConfig::from_toml_str("[dil]\nlambda = 1.0\n", Preset::Regression).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("seed = 1\nlamda = 2.0\n", Preset::Regression).is_err());
        assert!(RunConfig::from_toml_str("seed = 1\n[dil]\nlamda = 2.0\n", Preset::Regression).is_err());
        assert!(RunConfig::from_toml_str("seed = 1\n[dil.kernel]\nwidth = 2.0\n", Preset::Regression).is_err());
    }

    #[test]
    fn overrides_merge_over_preset() {
        let cfg = RunConfig::from_toml_str("seed = 4\npreset = \"classification\"\n[dil]\nlambda = 2.5\n", Preset::Regression).unwrap();
        let expected = RunConfig::preset(Preset::Classification, 4);
        assert_eq!(cfg.dil.lambda, 2.5);
        assert_eq!(cfg.dil.model, expected.dil.model);
        assert_eq!(cfg.dil.exploit.seed, 4);
        assert_eq!(cfg.baseline, expected.baseline);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_toml_str("seed = 9\n[baseline]\nepochs = 10\n", Preset::Regression).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml().unwrap(), Preset::Classification).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn nested_seed_must_agree() {
        assert!(RunConfig::from_toml_str("seed = 1\n[dil]\nseed = 2\n", Preset::Regression).is_err());
        assert!(RunConfig::from_toml_str("seed = 1\n[dil]\nseed = 1\n", Preset::Regression).is_ok());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("seed = 1\n[dil]\nalpha0 = 0.9\n", Preset::Regression).is_err());
        assert!(RunConfig::from_toml_str("seed = -3\n", Preset::Regression).is_err());
    }
}
