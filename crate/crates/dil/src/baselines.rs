//! Reference learners: plain ERM and worst-fraction (CVaR) DRO.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{DilError, Result};
use crate::exploit::{cap_for, top_mass_weights};
use crate::models::{self, Predictor};
use crate::synthdata::Samples;
use crate::trainer::{check_schedule, descend, ModelConfig, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BaselineMethod {
    Erm,
    Dro { alpha0: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Full-batch epochs. The default matches DIL's default budget
    /// (5 outer rounds of 500 epochs).
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { method: BaselineMethod::Erm, epochs: 2500, learning_rate: 0.05, seed: 0, model: ModelConfig::default() }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        check_schedule(self.epochs, self.learning_rate)?;
        if let BaselineMethod::Dro { alpha0 } = self.method {
            if !(alpha0 > 0.0 && alpha0 <= 0.5) {
                return Err(DilError::InvalidParam(format!("DRO alpha0 must lie in (0, 0.5], got {alpha0}")));
            }
        }
        Ok(())
    }
}

/// Full-batch descent on the unweighted loss.
pub fn train_erm(data: &Samples, cfg: &BaselineConfig) -> Result<Predictor> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(DilError::Empty("training set"));
    }
    let obj = Objective::erm(data);
    let mut model = cfg.model.init(data, cfg.seed)?;
    descend(&mut model, cfg.epochs, cfg.learning_rate, |m| obj.value_and_gradient(m), |m| obj.value(m).0)?;
    Ok(model)
}

/// Worst-case weights over the capped simplex for fixed per-sample losses,
/// paired with the weighted loss they give.
pub fn dro_inner(losses: &[f64], alpha0: f64) -> Result<(Vec<f64>, f64)> {
    let w = top_mass_weights(losses, alpha0)?.into_vec();
    let value = w.iter().zip(losses).map(|(a, b)| a * b).sum();
    Ok((w, value))
}

/// CVaR risk: mean loss over the worst `alpha0` fraction of samples.
pub fn dro_objective(model: &Predictor, data: &Samples, alpha0: f64) -> Result<f64> {
    let losses = models::per_sample_losses(model, &data.x, &data.y)?;
    Ok(dro_inner(&losses, alpha0)?.1)
}

/// Descent on [`dro_objective`]. The gradient at each step is the gradient of
/// the loss reweighted by the current worst-case weights.
pub fn train_dro(data: &Samples, cfg: &BaselineConfig) -> Result<Predictor> {
    cfg.validate()?;
    let BaselineMethod::Dro { alpha0 } = cfg.method else {
        return Err(DilError::InvalidParam("train_dro needs a DRO method config".into()));
    };
    if data.is_empty() {
        return Err(DilError::Empty("training set"));
    }
    cap_for(alpha0, data.len())?;
    let mut model = cfg.model.init(data, cfg.seed)?;
    let value = |m: &Predictor| dro_objective(m, data, alpha0).unwrap_or(f64::NAN);
    let value_and_gradient = |m: &Predictor| -> (f64, DVector<f64>) {
        let Ok(losses) = models::per_sample_losses(m, &data.x, &data.y) else {
            return (f64::NAN, DVector::zeros(m.n_params()));
        };
        let Ok((w, f)) = dro_inner(&losses, alpha0) else {
            return (f64::NAN, DVector::zeros(m.n_params()));
        };
        let mut res = models::loss_grads_multi(m, &data.x, &data.y, &[&w]);
        (f, res.pop().expect("one weighting").1)
    };
    descend(&mut model, cfg.epochs, cfg.learning_rate, value_and_gradient, value)?;
    Ok(model)
}

/// Dispatch on `cfg.method`.
pub fn train_baseline(data: &Samples, cfg: &BaselineConfig) -> Result<Predictor> {
    match cfg.method {
        BaselineMethod::Erm => train_erm(data, cfg),
        BaselineMethod::Dro { .. } => train_dro(data, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, Task};
    use crate::trainer::{run_dil, ArchKind, DilConfig};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn separable() -> Samples {
        let x = DMatrix::from_row_slice(6, 2, &[-2.0, 0.1, -1.5, -0.3, -1.0, 0.4, 1.0, 0.2, 1.5, -0.1, 2.0, 0.3]);
        Samples::new(x, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], Task::Classification { classes: 2 }).unwrap()
    }

    #[test]
    fn erm_separates_toy() {
        let d = separable();
        let m = train_erm(&d, &BaselineConfig { epochs: 200, ..Default::default() }).unwrap();
        assert_eq!(models::accuracy(&m, &d.x, &d.y).unwrap(), 1.0);
    }

    #[test]
    fn erm_equals_dil_without_penalty() {
        let d = separable();
        let model = ModelConfig { architecture: ArchKind::Mlp2, hidden: 4 };
        let dil = DilConfig { lambda: 0.0, outer_iters: 1, inner_epochs: 60, alpha0: 0.34, model: model.clone(), seed: 7, ..Default::default() };
        let (m_dil, _) = run_dil(&d, &dil).unwrap();
        let m_erm = train_erm(&d, &BaselineConfig { epochs: 60, model, seed: 7, ..Default::default() }).unwrap();
        assert_eq!(m_dil.params(), m_erm.params());
    }

    #[test]
    fn equal_losses_give_erm_value() {
        let (_, v) = dro_inner(&[0.7; 10], 0.2).unwrap();
        assert_relative_eq!(v, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn single_point_set_takes_max() {
        let losses = [0.3, 2.5, 1.0, 0.1];
        assert_eq!(dro_inner(&losses, 0.25).unwrap().1, 2.5);
    }

    #[test]
    fn dro_loss_does_not_increase() {
        let d = separable();
        let cfg = BaselineConfig { method: BaselineMethod::Dro { alpha0: 0.34 }, epochs: 50, ..Default::default() };
        let init = cfg.model.init(&d, cfg.seed).unwrap();
        let m = train_dro(&d, &cfg).unwrap();
        assert!(dro_objective(&m, &d, 0.34).unwrap() <= dro_objective(&init, &d, 0.34).unwrap());
        let lin = Predictor::zeros(Architecture::Linear { d_in: 2 }, d.task).unwrap();
        assert!(dro_objective(&lin, &d, 0.34).unwrap() >= models::loss(&lin, &models::Batch::new(&d.x, &d.y)).unwrap());
    }

    #[test]
    fn rejects_bad_alpha() {
        let cfg = BaselineConfig { method: BaselineMethod::Dro { alpha0: 0.7 }, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
