//! Checkpoint IO: a named-tensor table file plus a JSON config document at
//! `<path>.json` carrying a `kind` discriminator, so a checkpoint can be
//! reopened without knowing which model produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tactile_core::format;
use tactile_core::param::Parameterized;

use crate::slip::{SlipNet, SlipNetConfig};
use crate::touch::{TouchNet, TouchNetConfig};
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Touch,
    Slip,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Touch => "touch",
            ModelKind::Slip => "slip",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ConfigDoc {
    Touch { config: TouchNetConfig },
    Slip { config: SlipNetConfig },
}

/// Either classifier, as loaded from disk.
pub enum LoadedModel {
    Touch(TouchNet),
    Slip(SlipNet),
}

impl LoadedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            LoadedModel::Touch(_) => ModelKind::Touch,
            LoadedModel::Slip(_) => ModelKind::Slip,
        }
    }
}

/// `<path>.json`, next to the tensor table.
pub fn config_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn write_params<M: Parameterized>(path: &Path, model: &mut M) -> Result<(), ModelError> {
    let table: BTreeMap<String, tactile_core::Tensor> = model
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.value().clone()))
        .collect();
    format::save_table(path, &table)?;
    Ok(())
}

fn read_params<M: Parameterized>(path: &Path, model: &mut M) -> Result<(), ModelError> {
    let mut table = format::load_table(path)?;
    let mut params = model.named_params();
    for (name, p) in params.iter_mut() {
        let tensor = table.remove(name).ok_or_else(|| ModelError::Checkpoint {
            reason: format!("missing tensor {name:?}"),
        })?;
        if tensor.shape() != p.value().shape() {
            return Err(ModelError::Geometry {
                reason: format!(
                    "tensor {name:?} has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    p.value().shape()
                ),
            });
        }
        p.set_value(tensor)?;
    }
    if let Some((extra, _)) = table.into_iter().next() {
        return Err(ModelError::Checkpoint {
            reason: format!("unexpected tensor {extra:?}"),
        });
    }
    Ok(())
}

fn write_config(path: &Path, doc: &ConfigDoc) -> Result<(), ModelError> {
    let json = serde_json::to_string_pretty(doc).map_err(|e| ModelError::Checkpoint {
        reason: format!("config serialization: {e}"),
    })?;
    std::fs::write(config_path(path), json + "\n")?;
    Ok(())
}

pub fn save_touch(path: &Path, model: &mut TouchNet) -> Result<(), ModelError> {
    write_config(path, &ConfigDoc::Touch { config: model.config().clone() })?;
    write_params(path, model)
}

pub fn save_slip(path: &Path, model: &mut SlipNet) -> Result<(), ModelError> {
    write_config(path, &ConfigDoc::Slip { config: model.config().clone() })?;
    write_params(path, model)
}

/// Read the config document, rebuild the model, and fill in parameters,
/// validating names and shapes exactly.
pub fn load(path: &Path) -> Result<LoadedModel, ModelError> {
    let cpath = config_path(path);
    let json = std::fs::read_to_string(&cpath).map_err(|e| ModelError::Checkpoint {
        reason: format!("cannot read config {}: {e}", cpath.display()),
    })?;
    let doc: ConfigDoc = serde_json::from_str(&json).map_err(|e| ModelError::Checkpoint {
        reason: format!("bad config document: {e}"),
    })?;
    match doc {
        ConfigDoc::Touch { config } => {
            let mut net = TouchNet::new(config, 0)?;
            read_params(path, &mut net)?;
            Ok(LoadedModel::Touch(net))
        }
        ConfigDoc::Slip { config } => {
            let mut net = SlipNet::new(config, 0)?;
            read_params(path, &mut net)?;
            Ok(LoadedModel::Slip(net))
        }
    }
}

pub fn load_touch(path: &Path) -> Result<TouchNet, ModelError> {
    match load(path)? {
        LoadedModel::Touch(net) => Ok(net),
        LoadedModel::Slip(_) => Err(ModelError::Checkpoint {
            reason: "checkpoint holds a slip model, expected touch".into(),
        }),
    }
}

pub fn load_slip(path: &Path) -> Result<SlipNet, ModelError> {
    match load(path)? {
        LoadedModel::Slip(net) => Ok(net),
        LoadedModel::Touch(_) => Err(ModelError::Checkpoint {
            reason: "checkpoint holds a touch model, expected slip".into(),
        }),
    }
}
