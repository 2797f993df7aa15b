//! Single-file safetensors checkpoints of a [`TrainState`].
//!
//! Tensor keys: `<group>/<entry>` for parameters and buffers, and
//! `optim/<optimizer>/<group>/<entry>/<slot>` for optimizer moments. Scalars and the
//! resolved config live in the string metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};

use super::optim::SlotState;
use super::step::TrainState;
use crate::config::Config;
use crate::datagen::LoaderState;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dise-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for g in state.model.groups() {
        for (name, v) in g.params().chain(g.buffers()) {
            tensors.insert(format!("{}/{name}", g.group()), v.as_tensor().clone());
        }
    }
    let mut steps: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for opt in &state.optimizers {
        let entry = steps.entry(opt.name().to_string()).or_default();
        for (param, st) in opt.state() {
            entry.insert(param.clone(), st.step);
            for (slot, t) in &st.slots {
                tensors.insert(format!("optim/{}/{param}/{slot}", opt.name()), t.clone());
            }
        }
    }
    let meta = HashMap::from([
        ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
        ("version".to_string(), CHECKPOINT_VERSION.to_string()),
        ("iteration".to_string(), state.iteration.to_string()),
        ("best_miou".to_string(), serde_json::to_string(&state.best_miou)?),
        ("num_classes".to_string(), state.model.num_classes.to_string()),
        ("config".to_string(), state.config.to_toml_string()),
        ("generator".to_string(), serde_json::to_string(&state.config.data.generator())?),
        ("loaders".to_string(), serde_json::to_string(&state.loaders)?),
        ("optim_steps".to_string(), serde_json::to_string(&steps)?),
        ("extractor".to_string(), state.model.extractor.version().to_string()),
    ]);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    safetensors::serialize_to_file(tensors.iter().map(|(k, v)| (k.as_str(), v)), Some(meta), &tmp)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Rebuilds a state from a checkpoint. Everything is parsed and validated before the
/// state is returned, so a bad file never yields a half-restored model.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: &dyn std::fmt::Display| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(&e))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let get = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(&format!("metadata lacks `{k}`")));
    if get("format")? != CHECKPOINT_FORMAT {
        return Err(bad(&"not a training checkpoint"));
    }
    let version: u32 = get("version")?.parse().map_err(|e| bad(&e))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let iteration: usize = get("iteration")?.parse().map_err(|e| bad(&e))?;
    let num_classes: usize = get("num_classes")?.parse().map_err(|e| bad(&e))?;
    let best_miou: Option<f64> = serde_json::from_str(&get("best_miou")?)?;
    let loaders: Option<[LoaderState; 2]> = serde_json::from_str(&get("loaders")?)?;
    let steps: BTreeMap<String, BTreeMap<String, u64>> = serde_json::from_str(&get("optim_steps")?)?;
    let config = Config::from_toml_str(&get("config")?)?;

    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    let mut state = TrainState::new(config, num_classes)?;
    for g in state.model.groups() {
        let prefix = format!("{}/", g.group());
        let values: BTreeMap<String, Tensor> = tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|n| (n.to_string(), v.clone())))
            .collect();
        if values.is_empty() {
            return Err(Error::MissingGroup(g.group().to_string()));
        }
        g.assign(&values)?;
    }
    for opt in state.optimizers.iter_mut() {
        let mut restored: BTreeMap<String, SlotState> = BTreeMap::new();
        for (param, step) in steps.get(opt.name()).into_iter().flatten() {
            let prefix = format!("optim/{}/{param}/", opt.name());
            let slots = tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), v.clone())))
                .collect();
            restored.insert(param.clone(), SlotState { step: *step, slots });
        }
        opt.load_state(restored)?;
    }
    state.iteration = iteration;
    state.best_miou = best_miou;
    state.loaders = loaders;
    Ok(state)
}
