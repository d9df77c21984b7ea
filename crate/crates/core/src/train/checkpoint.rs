//! Full training state in one tensor archive: generator and critic weights,
//! Adam moments and the counters needed to resume bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Phase, TrainState};
use crate::archive;
use crate::critic::{Critic, CriticConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::nn::ParamStore;
use crate::optim::Adam;

pub const CHECKPOINT_FORMAT: &str = "arbsr-checkpoint-v1";

const GEN: &str = "generator.";
const G_M: &str = "adam.generator.m.";
const G_V: &str = "adam.generator.v.";
const C_M: &str = "adam.critic.m.";
const C_V: &str = "adam.critic.v.";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    step: u64,
    phase: Phase,
    phase_step: u64,
    skipped_guard: u64,
    skipped_nonfinite: u64,
    generator: GeneratorConfig,
    critic: Option<(CriticConfig, usize)>,
    adam: [AdamMeta; 2],
    #[serde(default)]
    code_version: String,
    /// Canonical run configuration, when the checkpoint came from a run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamMeta {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

impl AdamMeta {
    fn of(a: &Adam) -> Self {
        Self {
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            t: a.t,
        }
    }

    fn restore(&self, m: ParamStore, v: ParamStore) -> Adam {
        Adam {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            t: self.t,
            m,
            v,
        }
    }
}

fn put(out: &mut ParamStore, prefix: &str, store: &ParamStore) {
    for (k, v) in store {
        out.insert(format!("{prefix}{k}"), v.clone());
    }
}

fn take(all: &ParamStore, prefix: &str) -> ParamStore {
    all.iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone())))
        .collect()
}

/// Writes `state` atomically: a crash mid-write leaves any previous file at
/// `path` intact.
pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    save_checkpoint_with_config(path, state, None)
}

/// [`save_checkpoint`] that also records the run configuration text.
pub fn save_checkpoint_with_config(path: &Path, state: &TrainState, config: Option<&str>) -> Result<()> {
    let mut tensors = ParamStore::new();
    put(&mut tensors, GEN, &state.generator.params);
    put(&mut tensors, G_M, &state.g_opt.m);
    put(&mut tensors, G_V, &state.g_opt.v);
    put(&mut tensors, C_M, &state.c_opt.m);
    put(&mut tensors, C_V, &state.c_opt.v);
    if let Some(c) = &state.critic {
        // Critic names already carry their own prefix.
        put(&mut tensors, "", &c.params);
    }
    let meta = Meta {
        format: CHECKPOINT_FORMAT.into(),
        step: state.step,
        phase: state.phase,
        phase_step: state.phase_step,
        skipped_guard: state.skipped_guard,
        skipped_nonfinite: state.skipped_nonfinite,
        generator: state.generator.config.clone(),
        critic: state.critic.as_ref().map(|c| (c.config.clone(), c.in_channels)),
        adam: [AdamMeta::of(&state.g_opt), AdamMeta::of(&state.c_opt)],
        code_version: env!("CARGO_PKG_VERSION").into(),
        config: config.map(str::to_string),
    };
    let meta = serde_json::to_value(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    archive::save(path, &tensors, &meta)
}

/// Restores a state written by [`save_checkpoint`]. Logs are not stored in
/// checkpoints; the returned state starts with empty in-memory logs.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let (tensors, meta) = read(path)?;
    let generator = Generator::from_params(meta.generator, take(&tensors, GEN))?;
    let critic = match meta.critic {
        Some((cfg, ch)) => {
            let params = tensors
                .iter()
                .filter(|(k, _)| k.starts_with(crate::critic::PREFIX))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            Some(Critic::from_params(cfg, ch, params)?)
        }
        None => None,
    };
    Ok(TrainState {
        step: meta.step,
        phase: meta.phase,
        phase_step: meta.phase_step,
        generator,
        critic,
        g_opt: meta.adam[0].restore(take(&tensors, G_M), take(&tensors, G_V)),
        c_opt: meta.adam[1].restore(take(&tensors, C_M), take(&tensors, C_V)),
        skipped_guard: meta.skipped_guard,
        skipped_nonfinite: meta.skipped_nonfinite,
        log: Vec::new(),
        critic_log: Vec::new(),
    })
}

fn read(path: &Path) -> Result<(ParamStore, Meta)> {
    let (tensors, meta) = archive::load(path)?;
    let meta = meta.ok_or_else(|| Error::Checkpoint(format!("{}: no training metadata", path.display())))?;
    let meta: Meta =
        serde_json::from_value(meta).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported checkpoint format `{}`", meta.format)));
    }
    Ok((tensors, meta))
}

/// Run configuration text stored with the checkpoint, if any.
pub fn checkpoint_config(path: &Path) -> Result<Option<String>> {
    Ok(read(path)?.1.config)
}

/// Generator alone from a checkpoint (for inference and evaluation).
pub fn load_generator(path: &Path) -> Result<Generator> {
    Ok(load_checkpoint(path)?.generator)
}
