//! JSON checkpoints: model spec plus every parameter tensor by name.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{DynamicsModel, ModelSpec};
use crate::Real;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<Real>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn of(model: &DynamicsModel<Real>) -> Result<Self> {
        let params = model
            .params()
            .iter()
            .map(|p| {
                if !p.value.is_finite() {
                    return Err(Error::Format(format!("parameter `{}` is not finite", p.name)));
                }
                Ok(ParamRecord { name: p.name.clone(), shape: p.value.shape().to_vec(), values: p.value.data().to_vec() })
            })
            .collect::<Result<_>>()?;
        Ok(Self { format_version: FORMAT_VERSION, spec: model.spec().clone(), params })
    }

    /// Rebuild the model; every parameter must be present with its shape.
    pub fn into_model(self) -> Result<DynamicsModel<Real>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", self.format_version)));
        }
        // the architecture is a function of the spec; initial values are overwritten
        let mut model = DynamicsModel::new(self.spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        if model.params().len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for rec in self.params {
            let slot = model
                .params_mut()
                .by_name_mut(&rec.name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{}`", rec.name)))?;
            if slot.value.shape() != rec.shape.as_slice() {
                return Err(Error::Format(format!("parameter `{}` has shape {:?}, expected {:?}", rec.name, rec.shape, slot.value.shape())));
            }
            slot.value = Tensor::new(rec.shape, rec.values)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn save(model: &DynamicsModel<Real>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, Checkpoint::of(model)?.to_json()?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DynamicsModel<Real>> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)?.into_model()
}
