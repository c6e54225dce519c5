//! JSON checkpoints: `{version, architecture, dims, task, params}`.
//!
//! Parameters are written with 17 significant digits so a load reproduces
//! them bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{Architecture, Predictor, Task};
use crate::error::{DilError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    d_in: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    out: usize,
}

#[derive(Serialize)]
struct CheckpointOut {
    version: u32,
    architecture: &'static str,
    dims: Dims,
    task: Task,
    params: Vec<Box<RawValue>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    version: u32,
    architecture: String,
    dims: Dims,
    task: Task,
    params: Vec<f64>,
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn to_json(model: &Predictor) -> Result<String> {
    let (architecture, hidden) = match model.architecture() {
        Architecture::Linear { .. } => ("linear", None),
        Architecture::Mlp2 { hidden, .. } => ("mlp2", Some(hidden)),
    };
    let params = model
        .params()
        .iter()
        .map(|p| RawValue::from_string(fmt17(*p)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let out = CheckpointOut {
        version: CHECKPOINT_VERSION,
        architecture,
        dims: Dims { d_in: model.architecture().d_in(), hidden, out: model.task().out_dim() },
        task: model.task(),
        params,
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

pub(crate) fn from_json(text: &str) -> Result<Predictor> {
    let ck: CheckpointIn =
        serde_json::from_str(text).map_err(|e| DilError::Checkpoint(format!("malformed checkpoint: {e}")))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(DilError::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    let arch = match (ck.architecture.as_str(), ck.dims.hidden) {
        ("linear", None) => Architecture::Linear { d_in: ck.dims.d_in },
        ("mlp2", Some(hidden)) => Architecture::Mlp2 { d_in: ck.dims.d_in, hidden },
        (a, h) => {
            return Err(DilError::Checkpoint(format!("unknown architecture `{a}` with hidden = {h:?}")));
        }
    };
    if ck.dims.out != ck.task.out_dim() {
        return Err(DilError::Checkpoint(format!(
            "dims.out = {} disagrees with task output width {}",
            ck.dims.out,
            ck.task.out_dim()
        )));
    }
    let expected = arch.n_params(ck.task.out_dim());
    if ck.params.len() != expected {
        return Err(DilError::Checkpoint(format!(
            "parameter count: expected {expected}, found {}",
            ck.params.len()
        )));
    }
    Predictor::from_params(arch, ck.task, ck.params)
}

pub fn save(model: &Predictor, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json(model)? + "\n")?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Predictor> {
    from_json(&std::fs::read_to_string(path)?)
}
