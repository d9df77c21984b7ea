//! Run configuration: a TOML document with `model`, `data`, `loss`, `critic`,
//! `schedule` and `eval` sections. Missing keys take their defaults, unknown
//! keys are rejected with their full path, and [`RunConfig::to_toml`] emits a
//! canonical dump that parses back to the same value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::critic::CriticConfig;
use crate::data::DatasetProfile;
use crate::error::{Error, Result};
use crate::eval::{EvalPlan, MetricSet};
use crate::generator::GeneratorConfig;
use crate::losses::{GanVariant, LossWeights, SeededConvExtractor, DEFAULT_GP_WEIGHT, DEFAULT_VGG_TAG};
use crate::metrics::{InceptionV3, SeededConvEmbedder};
use crate::nn::InitScheme;
use crate::scale::default_scale_grid;
use crate::train::TrainSchedule;

pub const PRESETS: [&str; 2] = ["default", "tiny"];

/// Perceptual feature networks selectable in `loss.perceptual`.
pub const PERCEPTUAL_TAGS: [&str; 3] = ["vgg19", SeededConvExtractor::TAG, "none"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// One of the built-in crop profiles.
    pub profile: String,
    /// Volume files or directories to scan. Empty means synthetic phantoms.
    pub paths: Vec<PathBuf>,
    /// Nominal HR patch size `H_p` (square).
    pub patch_size: usize,
    pub seed: u64,
    /// Fraction of volumes (by id) held out for evaluation.
    pub test_fraction: f64,
    /// Standard deviation of optional additive noise after degradation.
    pub noise_std: f64,
    pub phantom_volumes: usize,
    pub phantom_slices: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            profile: "phantom".into(),
            paths: Vec::new(),
            patch_size: 96,
            seed: 0,
            test_fraction: 0.2,
            noise_std: 0.0,
            phantom_volumes: 10,
            phantom_slices: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub eta: f64,
    pub variant: GanVariant,
    pub gp_weight: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    /// WGAN weight clipping range; off when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_clip: Option<f64>,
    /// Feature network of the perceptual term, one of [`PERCEPTUAL_TAGS`].
    pub perceptual: String,
    /// Layer tag for `vgg19`.
    pub perceptual_layer: String,
    /// Pretrained weights for `vgg19`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perceptual_weights: Option<PathBuf>,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda: w.lambda,
            gamma: w.gamma,
            eta: w.eta,
            variant: GanVariant::Wgangp,
            gp_weight: DEFAULT_GP_WEIGHT,
            n_critic: 1,
            weight_clip: None,
            perceptual: "vgg19".into(),
            perceptual_layer: DEFAULT_VGG_TAG.into(),
            perceptual_weights: None,
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            gamma: self.gamma,
            eta: self.eta,
        }
    }
}

/// Critic architecture; the head type follows `loss.variant`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSection {
    pub n_blocks: usize,
    pub base_channels: usize,
    pub negative_slope: f64,
}

impl Default for CriticSection {
    fn default() -> Self {
        let c = CriticConfig::default();
        Self {
            n_blocks: c.n_blocks,
            base_channels: c.base_channels,
            negative_slope: c.negative_slope,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub scale_grid: Vec<f64>,
    pub metrics: MetricSet,
    /// Embedding network for FID.
    pub fid_embedder: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid_weights: Option<PathBuf>,
    pub fid_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scale_grid: default_scale_grid(),
            metrics: MetricSet::default(),
            fid_embedder: InceptionV3::TAG.into(),
            fid_weights: None,
            fid_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Weight initialization for fresh networks.
    pub init: InitScheme,
    pub model: GeneratorConfig,
    pub data: DataConfig,
    pub loss: LossConfig,
    pub critic: CriticSection,
    pub schedule: TrainSchedule,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            init: InitScheme::KaimingUniform,
            model: GeneratorConfig::default(),
            data: DataConfig::default(),
            loss: LossConfig::default(),
            critic: CriticSection::default(),
            schedule: TrainSchedule::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn check_positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    /// Built-in configurations: `default` (full-size model) and `tiny`
    /// (a few-minute CPU run on phantoms with desk-scale feature networks).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "tiny" => {
                let mut c = Self::default();
                c.model = GeneratorConfig::tiny();
                c.data.patch_size = 32;
                c.data.phantom_volumes = 5;
                c.data.phantom_slices = 6;
                c.loss.perceptual = SeededConvExtractor::TAG.into();
                let desk = CriticConfig::desk();
                c.critic = CriticSection {
                    n_blocks: desk.n_blocks,
                    base_channels: desk.base_channels,
                    negative_slope: desk.negative_slope,
                };
                c.schedule = TrainSchedule {
                    warmup_steps: 150,
                    adv_steps: 50,
                    finetune_steps: 50,
                    batch_size: 4,
                    lr0: 1e-3,
                    lr_halving_period: 1000,
                    checkpoint_every: 50,
                    ..TrainSchedule::default()
                };
                c.eval.scale_grid = vec![1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
                c.eval.fid_embedder = SeededConvEmbedder::TAG.into();
                Ok(c)
            }
            other => Err(Error::config("preset", format!("unknown preset `{other}` (expected one of {PRESETS:?})"))),
        }
    }

    /// Parses a TOML document. A top-level `preset = "<name>"` key selects
    /// the base the document is layered over (default: `default`).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.to_string()))?;
        if doc.contains_key("sweep") {
            return Err(Error::config("sweep", "sweep documents expand to several configs; use `parse_sweep`"));
        }
        Self::from_table(&mut doc)
    }

    fn from_table(doc: &mut toml::Table) -> Result<Self> {
        let preset = match doc.remove("preset") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(Error::config("preset", "must be a string")),
            None => "default".into(),
        };
        let base = Self::preset(&preset)?;
        let reference = base.key_reference()?;
        let mut unknown = Vec::new();
        unknown_keys(doc, &reference, "", &mut unknown);
        if let Some(k) = unknown.first() {
            return Err(Error::config(k.clone(), "unknown key"));
        }
        let base_value = Value::try_from(&base).map_err(|e| Error::config("<document>", e.to_string()))?;
        let mut merged = base_value.clone();
        merge(&mut merged, Value::Table(doc.clone()));
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(type_error_key(doc, &base_value), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `source`: a path to a TOML file, or a preset name.
    pub fn load(source: &str) -> Result<Self> {
        let path = Path::new(source);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Self::from_toml_str(&text);
        }
        if PRESETS.contains(&source) {
            return Self::preset(source);
        }
        Err(Error::config(
            "--config",
            format!("`{source}` is neither a readable file nor a preset {PRESETS:?}"),
        ))
    }

    /// Canonical TOML dump.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    /// Full key tree, including optional keys that the canonical dump omits.
    fn key_reference(&self) -> Result<toml::Table> {
        let mut full = self.clone();
        full.loss.weight_clip = Some(0.01);
        full.loss.perceptual_weights = Some(PathBuf::new());
        full.eval.fid_weights = Some(PathBuf::new());
        match Value::try_from(&full).map_err(|e| Error::config("<document>", e.to_string()))? {
            Value::Table(t) => Ok(t),
            _ => unreachable!("a struct serializes to a table"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.depth == 0 {
            return Err(Error::config("model.depth", "must be at least 1"));
        }
        let profile = DatasetProfile::builtin(&self.data.profile)?;
        if !profile.is_phantom() && self.data.paths.is_empty() {
            return Err(Error::config(
                "data.paths",
                format!("profile `{}` needs volume files or directories", profile.name),
            ));
        }
        if profile.channels != self.model.channels {
            return Err(Error::config(
                "model.channels",
                format!("profile `{}` has {} channels", profile.name, profile.channels),
            ));
        }
        if self.data.patch_size < 8 {
            return Err(Error::config("data.patch_size", "must be at least 8"));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::config("data.test_fraction", "must be within [0, 1)"));
        }
        if !(self.data.noise_std.is_finite() && self.data.noise_std >= 0.0) {
            return Err(Error::config("data.noise_std", "must be non-negative"));
        }
        if self.data.phantom_volumes < 2 {
            return Err(Error::config("data.phantom_volumes", "must be at least 2 (train and test)"));
        }
        if self.data.phantom_slices == 0 {
            return Err(Error::config("data.phantom_slices", "must be at least 1"));
        }
        self.loss.weights().validate()?;
        if !(self.loss.gp_weight.is_finite() && self.loss.gp_weight >= 0.0) {
            return Err(Error::config("loss.gp_weight", "must be non-negative and finite"));
        }
        if self.loss.n_critic == 0 {
            return Err(Error::config("loss.n_critic", "must be at least 1"));
        }
        if let Some(c) = self.loss.weight_clip {
            check_positive("loss.weight_clip", c)?;
        }
        if !PERCEPTUAL_TAGS.contains(&self.loss.perceptual.as_str()) {
            return Err(Error::config(
                "loss.perceptual",
                format!("unknown extractor `{}` (expected one of {PERCEPTUAL_TAGS:?})", self.loss.perceptual),
            ));
        }
        self.critic_config().validate()?;
        self.schedule.validate()?;
        EvalPlan::new(self.eval.scale_grid.clone()).validate()?;
        if ![InceptionV3::TAG, SeededConvEmbedder::TAG].contains(&self.eval.fid_embedder.as_str()) {
            return Err(Error::config(
                "eval.fid_embedder",
                format!(
                    "unknown embedder `{}` (expected `{}` or `{}`)",
                    self.eval.fid_embedder,
                    InceptionV3::TAG,
                    SeededConvEmbedder::TAG
                ),
            ));
        }
        Ok(())
    }

    pub fn critic_config(&self) -> CriticConfig {
        CriticConfig {
            n_blocks: self.critic.n_blocks,
            base_channels: self.critic.base_channels,
            negative_slope: self.critic.negative_slope,
            head_mode: self.loss.variant.head_mode(),
        }
    }
}

/// Expands a sweep document: every key under `[sweep]` is a dotted path
/// mapped to a list of values, and the result is the Cartesian product in
/// key order, each layered over the rest of the document.
pub fn parse_sweep(text: &str) -> Result<Vec<(String, RunConfig)>> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.to_string()))?;
    let axes: BTreeMap<String, Vec<Value>> = match doc.remove("sweep") {
        None => BTreeMap::new(),
        Some(Value::Table(t)) => t
            .into_iter()
            .map(|(k, v)| match v {
                Value::Array(a) if !a.is_empty() => Ok((k, a)),
                _ => Err(Error::config(format!("sweep.{k}"), "must be a non-empty array")),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(Error::config("sweep", "must be a table")),
    };
    let mut cells: Vec<(String, toml::Table)> = vec![(String::new(), doc)];
    for (key, values) in &axes {
        let mut next = Vec::new();
        for (label, base) in &cells {
            for v in values {
                let mut t = base.clone();
                set_path(&mut t, key, v.clone())?;
                let sep = if label.is_empty() { "" } else { "," };
                next.push((format!("{label}{sep}{key}={v}"), t));
            }
        }
        cells = next;
    }
    cells
        .into_iter()
        .map(|(label, mut t)| Ok((label, RunConfig::from_table(&mut t)?)))
        .collect()
}

fn set_path(t: &mut toml::Table, path: &str, v: Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config(path, "empty key"))?;
    let mut cur = t;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), v);
    Ok(())
}

fn unknown_keys(doc: &toml::Table, reference: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in doc {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (reference.get(k), v) {
            (None, _) => out.push(path),
            (Some(Value::Table(r)), Value::Table(d)) => unknown_keys(d, r, &path, out),
            _ => {}
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot @ Value::Table(_)) if v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// The first leaf of `doc` that fails to deserialize on its own over `base`.
fn type_error_key(doc: &toml::Table, base: &Value) -> String {
    let mut leaves = Vec::new();
    collect_leaves(doc, "", &mut leaves);
    for (path, v) in leaves {
        let mut one = toml::Table::new();
        if set_path(&mut one, &path, v).is_err() {
            return path;
        }
        let mut merged = base.clone();
        merge(&mut merged, Value::Table(one));
        if merged.try_into::<RunConfig>().is_err() {
            return path;
        }
    }
    "<document>".into()
}

fn collect_leaves(t: &toml::Table, prefix: &str, out: &mut Vec<(String, Value)>) {
    for (k, v) in t {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(inner) => collect_leaves(inner, &path, out),
            _ => out.push((path, v.clone())),
        }
    }
}
