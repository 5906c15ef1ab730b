//! Checkpoints: parameters plus the model configuration that built them.

use std::collections::BTreeMap;
use std::path::Path;

use sgdvit_tensor::io::Checkpoint;
use sgdvit_tensor::{Element, ParamStore, TensorError};

use crate::config::{model_entries, take_model, KvDoc};
use crate::error::{CoreError, Result};
use crate::model::{Model, ModelConfig};

pub fn save<T: Element>(
    path: &Path,
    cfg: &ModelConfig,
    store: &ParamStore<T>,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let mut ck = Checkpoint::new(store.clone());
    ck.meta.extend(extra.clone());
    ck.meta.extend(model_entries(cfg));
    ck.save(path).map_err(|e| match e {
        TensorError::Io(io) => CoreError::io(path, io),
        e => e.into(),
    })
}

/// Model configuration stored in checkpoint metadata.
pub fn model_config(meta: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let text: String = meta.iter().filter(|(k, _)| k.starts_with("model.")).map(|(k, v)| format!("{k} = {v}\n")).collect();
    let mut doc = KvDoc::parse(&text)?;
    let cfg = take_model(&mut doc)?;
    doc.finish()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub model: Model,
    pub store: ParamStore<T>,
    pub meta: BTreeMap<String, String>,
}

/// Rebuilds the architecture from the stored configuration and copies
/// every parameter by name, checking shapes.
pub fn load<T: Element>(path: &Path) -> Result<Loaded<T>> {
    if !path.exists() {
        return Err(CoreError::data(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::<T>::load(path).map_err(|e| match e {
        TensorError::Io(io) => CoreError::io(path, io),
        e => e.into(),
    })?;
    let cfg = model_config(&ck.meta)?;
    let (model, mut store) = Model::new::<T>(cfg, 0)?;
    if ck.params.len() != store.len() {
        return Err(CoreError::data(format!(
            "checkpoint holds {} tensors, the configured model has {}",
            ck.params.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let src = ck.params.by_name(&name).map_err(|_| CoreError::data(format!("checkpoint lacks `{name}`")))?;
        if src.shape() != store.get(id).shape() {
            return Err(CoreError::data(format!(
                "`{name}` has shape {:?} in the checkpoint, {:?} in the model",
                src.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = src.clone();
    }
    Ok(Loaded { model, store, meta: ck.meta })
}
