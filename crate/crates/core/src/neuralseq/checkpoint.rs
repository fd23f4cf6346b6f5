//! Checkpoint persistence.
//!
//! A checkpoint is one JSON document: a header (model spec, epoch count,
//! final loss) plus a name-keyed map of parameter blobs. Each blob is the
//! base64 encoding of the tensor's values as little-endian `f64`.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imusynth::SensorSet;
use crate::scalar::Real;

use super::model::{check_params, ModelSpec, ParamStore};
use super::tensor::Tensor;

pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
    /// Sensor joints in input-slot order, when known.
    pub sensors: Option<SensorSet>,
    pub trained_epochs: usize,
    pub trained_steps: usize,
    /// MSE of the final parameters over the whole training set; `None` for
    /// parameters that were never trained.
    pub final_train_loss: Option<f64>,
    /// Window length used in training; evaluation chunks sequences the same way.
    pub window_len: usize,
    /// Mean training loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Blob {
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    ckpt_version: u32,
    spec: ModelSpec,
    #[serde(default)]
    sensors: Option<SensorSet>,
    trained_epochs: usize,
    trained_steps: usize,
    final_train_loss: Option<f64>,
    window_len: usize,
    epoch_losses: Vec<f64>,
    params: BTreeMap<String, Blob>,
}

impl<T: Real> Checkpoint<T> {
    /// Wraps untrained parameters, e.g. from [`super::model::init_params`].
    pub fn untrained(spec: ModelSpec, params: ParamStore<T>, window_len: usize) -> Result<Self> {
        check_params(&spec, &params)?;
        Ok(Self {
            spec,
            params,
            sensors: None,
            trained_epochs: 0,
            trained_steps: 0,
            final_train_loss: None,
            window_len,
            epoch_losses: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let params = self
            .params
            .iter()
            .map(|(name, t)| {
                let mut bytes = Vec::with_capacity(t.len() * 8);
                for v in t.data() {
                    bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
                }
                (
                    name.clone(),
                    Blob {
                        shape: t.shape().to_vec(),
                        data: STANDARD.encode(bytes),
                    },
                )
            })
            .collect();
        let file = CheckpointFile {
            ckpt_version: CKPT_VERSION,
            spec: self.spec.clone(),
            sensors: self.sensors.clone(),
            trained_epochs: self.trained_epochs,
            trained_steps: self.trained_steps,
            final_train_loss: self.final_train_loss,
            window_len: self.window_len,
            epoch_losses: self.epoch_losses.clone(),
            params,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(s)?;
        if file.ckpt_version != CKPT_VERSION {
            return Err(Error::Format(format!(
                "unsupported ckpt_version {} (expected {CKPT_VERSION})",
                file.ckpt_version
            )));
        }
        let mut params = ParamStore::new();
        for (name, blob) in file.params {
            let bytes = STANDARD
                .decode(blob.data.as_bytes())
                .map_err(|e| Error::Format(format!("parameter {name}: {e}")))?;
            if bytes.len() % 8 != 0 {
                return Err(Error::Format(format!("parameter {name}: truncated blob")));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect();
            params.insert(name, Tensor::new(blob.shape, data)?);
        }
        file.spec.validate()?;
        check_params(&file.spec, &params)?;
        if let Some(s) = &file.sensors {
            if s.len() != file.spec.n_sensors {
                return Err(Error::Format(format!(
                    "checkpoint lists {} sensors for a {}-sensor model",
                    s.len(),
                    file.spec.n_sensors
                )));
            }
        }
        Ok(Self {
            spec: file.spec,
            params,
            sensors: file.sensors,
            trained_epochs: file.trained_epochs,
            trained_steps: file.trained_steps,
            final_train_loss: file.final_train_loss,
            window_len: file.window_len,
            epoch_losses: file.epoch_losses,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
