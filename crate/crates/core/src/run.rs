//! Run directories and the end-to-end commands behind the CLI: data
//! preparation, training, fine-tuning, evaluation, inference and reports.
//!
//! A run directory holds `config.toml`, `manifest.json`, the step logs,
//! `checkpoints/` and `reports/`. Commands that write into it take an
//! exclusive lock file for their duration.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::write_atomic;
use crate::config::RunConfig;
use crate::data::{self, DatasetProfile, Volume, VolumePatchSource, RAW_EXTENSION};
use crate::error::{Error, Result};
use crate::eval::{self, Bicubic, EvalPlan, SrModel};
use crate::generator::Generator;
use crate::losses::{FeatureExtractor, SeededConvExtractor, Vgg19Extractor};
use crate::metrics::{self, Embedder, MetricReport};
use crate::tensor::Tensor;
use crate::train::{self, checkpoint_config, load_checkpoint, Objective, TrainContext, TrainState};

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "arbsr-run-v1";

/// Artifact index of a run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub code_version: String,
    /// Canonical TOML of the configuration the run was started with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    /// Checkpoint file (relative path) to its SHA-256.
    #[serde(default)]
    pub checkpoints: BTreeMap<String, String>,
    #[serde(default)]
    pub reports: Vec<String>,
    #[serde(default)]
    pub logs: Vec<String>,
    /// Commands applied to the directory, in order.
    #[serde(default)]
    pub history: Vec<String>,
}

/// An open, locked run directory.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

impl RunDir {
    /// Creates `root` if needed and takes the lock. A lock left behind by a
    /// process that no longer exists is taken over with a warning.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let lock = root.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&lock) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id()).map_err(|e| Error::io(&lock, e))?;
                    return Ok(Self { root });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let owner = fs::read_to_string(&lock).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match owner {
                        Some(pid) if pid != std::process::id() && !pid_alive(pid) => {
                            log::warn!("removing stale lock of process {pid} in {}", root.display());
                            fs::remove_file(&lock).map_err(|e| Error::io(&lock, e))?;
                        }
                        _ => return Err(Error::Locked(root)),
                    }
                }
                Err(e) => return Err(Error::io(&lock, e)),
            }
        }
        Err(Error::Locked(root))
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn latest_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("latest.safetensors")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn read_manifest(&self) -> Result<Manifest> {
        let path = self.root.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Decode {
                path,
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest {
                format: MANIFEST_FORMAT.into(),
                code_version: env!("CARGO_PKG_VERSION").into(),
                ..Manifest::default()
            }),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Re-indexes checkpoints and logs on disk, applies `edit` and writes
    /// the manifest atomically.
    pub fn update_manifest(&self, edit: impl FnOnce(&mut Manifest)) -> Result<Manifest> {
        let mut m = self.read_manifest()?;
        m.checkpoints.clear();
        if let Ok(entries) = fs::read_dir(self.checkpoints()) {
            let mut names: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
            names.sort();
            for p in names {
                if p.extension().is_some_and(|e| e == "safetensors") {
                    let rel = format!("checkpoints/{}", p.file_name().unwrap_or_default().to_string_lossy());
                    m.checkpoints.insert(rel, file_digest(&p)?);
                }
            }
        }
        m.logs = ["train_log.csv", "critic_log.csv"]
            .iter()
            .filter(|n| self.root.join(n).exists())
            .map(|n| n.to_string())
            .collect();
        edit(&mut m);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        write_atomic(&self.root.join(MANIFEST_FILE), (text + "\n").as_bytes())?;
        Ok(m)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Train and test volumes, disjoint by volume id.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub profile: DatasetProfile,
    pub train: Vec<(String, Volume)>,
    pub test: Vec<(String, Volume)>,
}

impl Dataset {
    pub fn train_volumes(&self) -> Vec<Volume> {
        self.train.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn test_volumes(&self) -> Vec<Volume> {
        self.test.iter().map(|(_, v)| v.clone()).collect()
    }
}

fn is_volume_file(p: &Path) -> bool {
    let name = p.file_name().map(|s| s.to_string_lossy().to_lowercase()).unwrap_or_default();
    name.ends_with(".nii") || name.ends_with(".nii.gz") || name.ends_with(&format!(".{RAW_EXTENSION}"))
}

/// Volume files named by `paths`; directories contribute their volume files
/// (not recursively), sorted by name.
pub fn volume_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && is_volume_file(f))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(Error::config("data.paths", format!("{} does not exist", p.display())));
        }
    }
    if out.is_empty() {
        return Err(Error::config("data.paths", "no volume files found"));
    }
    Ok(out)
}

/// Loads (or synthesizes) the configured corpus and splits it by volume id.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let profile = DatasetProfile::builtin(&cfg.data.profile)?;
    let all: Vec<(String, Volume)> = if cfg.data.paths.is_empty() {
        data::phantom_volumes(&profile, cfg.data.phantom_volumes, cfg.data.phantom_slices, cfg.data.seed)?
    } else {
        volume_files(&cfg.data.paths)?
            .iter()
            .map(|p| Ok((data::volume_id(p), data::load_volume(p, &profile)?)))
            .collect::<Result<_>>()?
    };
    let ids: Vec<String> = all.iter().map(|(id, _)| id.clone()).collect();
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(*id)) {
        return Err(Error::config("data.paths", format!("volume id `{dup}` appears twice")));
    }
    let (train_ids, _) = eval::split_by_volume_id(&ids, cfg.data.test_fraction, cfg.data.seed)?;
    if train_ids.is_empty() {
        return Err(Error::config("data.test_fraction", "leaves no training volumes"));
    }
    let (train, test) = all.into_iter().partition(|(id, _)| train_ids.contains(id));
    Ok(Dataset { profile, train, test })
}

pub fn patch_source(cfg: &RunConfig, volumes: Vec<Volume>) -> VolumePatchSource {
    VolumePatchSource {
        volumes,
        patch: (cfg.data.patch_size, cfg.data.patch_size),
        batch_size: cfg.schedule.batch_size,
        noise_std: cfg.data.noise_std,
    }
}

/// Perceptual feature network for the configured loss; `None` when the
/// perceptual term is disabled.
pub fn build_extractor(cfg: &RunConfig) -> Result<Option<Arc<dyn FeatureExtractor>>> {
    let (_, _, eta) = cfg.loss.weights().effective();
    if eta == 0.0 || cfg.loss.perceptual == "none" {
        return Ok(None);
    }
    match cfg.loss.perceptual.as_str() {
        SeededConvExtractor::TAG => Ok(Some(Arc::new(SeededConvExtractor::new(cfg.data.seed)))),
        "vgg19" => {
            let path = cfg.loss.perceptual_weights.as_ref().ok_or_else(|| {
                Error::config(
                    "loss.perceptual_weights",
                    "vgg19 needs pretrained weights (or set loss.perceptual = \"seeded-small-conv\")",
                )
            })?;
            Ok(Some(Arc::new(Vgg19Extractor::load(path, &cfg.loss.perceptual_layer)?)))
        }
        other => Err(Error::config("loss.perceptual", format!("unknown extractor `{other}`"))),
    }
}

pub fn build_objective(cfg: &RunConfig) -> Result<Objective> {
    let mut obj = Objective::new(cfg.loss.variant, cfg.loss.weights(), cfg.critic_config());
    obj.adversarial.gp_weight = cfg.loss.gp_weight;
    obj.n_critic = cfg.loss.n_critic;
    obj.weight_clip = cfg.loss.weight_clip;
    if let Some(v) = build_extractor(cfg)? {
        obj = obj.with_extractor(v);
    }
    Ok(obj)
}

pub fn build_embedder(cfg: &RunConfig) -> Result<Option<Box<dyn Embedder>>> {
    if !cfg.eval.metrics.fid {
        return Ok(None);
    }
    metrics::embedder_for(&cfg.eval.fid_embedder, cfg.eval.fid_seed, cfg.eval.fid_weights.as_deref()).map(Some)
}

/// Splits a total step budget over warm-up and adversarial phases in
/// proportion to the configured phase lengths.
pub fn split_steps(cfg: &mut RunConfig, total: u64) {
    let (w, a) = (cfg.schedule.warmup_steps, cfg.schedule.adv_steps);
    if w + a == 0 {
        cfg.schedule.warmup_steps = total;
        return;
    }
    let warm = ((total as f64) * (w as f64) / ((w + a) as f64)).round() as u64;
    cfg.schedule.warmup_steps = warm;
    cfg.schedule.adv_steps = total - warm;
}

fn context(cfg: &RunConfig, run: &RunDir) -> TrainContext {
    TrainContext {
        init_scheme: Some(cfg.init),
        config_toml: Some(cfg.to_toml()),
        ..TrainContext::in_dir(run.path())
    }
}

/// Refuses to continue a run directory that was started with a different
/// model or data configuration.
fn check_same_run(run: &RunDir, cfg: &RunConfig) -> Result<()> {
    let Some(text) = run.read_manifest()?.config else {
        return Ok(());
    };
    let prev = RunConfig::from_toml_str(&text)?;
    if prev.model != cfg.model || prev.data != cfg.data {
        return Err(Error::config(
            "--run",
            format!(
                "{} was started with a different model or data configuration",
                run.path().display()
            ),
        ));
    }
    Ok(())
}

fn record_start(run: &RunDir, cfg: &RunConfig, command: &str) -> Result<()> {
    let text = cfg.to_toml();
    write_atomic(&run.path().join("config.toml"), text.as_bytes())?;
    run.update_manifest(|m| {
        m.config.get_or_insert(text);
        m.history.push(command.to_string());
    })?;
    Ok(())
}

/// Warm-up then adversarial training, resuming from the run's latest
/// checkpoint when one exists.
pub fn train(cfg: &RunConfig, run: &RunDir) -> Result<TrainState> {
    check_same_run(run, cfg)?;
    let latest = run.latest_checkpoint();
    let state = if latest.exists() {
        let s = load_checkpoint(&latest)?;
        if s.generator.config != cfg.model {
            return Err(Error::config("model", "latest checkpoint does not match the configured model"));
        }
        log::info!("resuming from step {} ({} phase)", s.step, s.phase.name());
        s
    } else {
        train::init_weights(&cfg.model, &cfg.schedule, cfg.init)?
    };
    record_start(run, cfg, "train")?;
    let dataset = load_dataset(cfg)?;
    let source = patch_source(cfg, dataset.train_volumes());
    let ctx = context(cfg, run);
    let state = train::warmup_train(state, &source, &cfg.schedule, &ctx)?;
    let obj = build_objective(cfg)?;
    let state = train::adversarial_train(state, &source, &cfg.schedule, &obj, &ctx)?;
    run.update_manifest(|_| {})?;
    Ok(state)
}

/// Transfers `from` to the configured data (adapting channel counts) and
/// fine-tunes with the combined loss.
pub fn finetune(cfg: &RunConfig, run: &RunDir, from: &Path) -> Result<TrainState> {
    record_start(run, cfg, &format!("finetune from {}", from.display()))?;
    let dataset = load_dataset(cfg)?;
    let source = patch_source(cfg, dataset.train_volumes());
    let obj = build_objective(cfg)?;
    let state = train::finetune(from, &cfg.model, &source, &cfg.schedule, &obj, &context(cfg, run))?;
    run.update_manifest(|_| {})?;
    Ok(state)
}

/// Evaluates a checkpoint (or bicubic when `checkpoint` is `None`) on the
/// test split and writes `reports/{stem}.*`.
pub fn evaluate(cfg: &RunConfig, run: &RunDir, checkpoint: Option<&Path>, stem: &str) -> Result<MetricReport> {
    let dataset = load_dataset(cfg)?;
    if dataset.test.is_empty() {
        return Err(Error::config("data.test_fraction", "the test split is empty"));
    }
    let embedder = build_embedder(cfg)?;
    let mut plan = EvalPlan::new(cfg.eval.scale_grid.clone());
    plan.metrics = cfg.eval.metrics;
    plan.metadata.insert("dataset".into(), dataset.profile.name.clone().into());
    plan.metadata.insert(
        "test_volumes".into(),
        dataset.test.iter().map(|(id, _)| id.clone()).collect(),
    );
    let generator;
    let model: &dyn SrModel = match checkpoint {
        Some(path) => {
            generator = load_checkpoint(path)?.generator;
            plan.metadata.insert(
                "checkpoint".into(),
                serde_json::json!({
                    "file": path.file_name().unwrap_or_default().to_string_lossy(),
                    "sha256": file_digest(path)?,
                }),
            );
            &generator
        }
        None => &Bicubic,
    };
    let report = eval::evaluate(&plan, model, &dataset.test_volumes(), embedder.as_deref())?;
    let files = eval::render_report(&report, &run.reports(), stem)?;
    run.update_manifest(|m| {
        m.history.push(format!("evaluate {}", model.name()));
        for f in [&files.csv, &files.sidecar, &files.plot] {
            let rel = format!("reports/{}", f.file_name().unwrap_or_default().to_string_lossy());
            if !m.reports.contains(&rel) {
                m.reports.push(rel);
            }
        }
    })?;
    Ok(report)
}

/// Writes a canonical copy of every corpus volume as `.rvol` into `out`
/// (synthetic phantoms are written uncropped, as a scanner would produce
/// them) and a `split.json` listing the train and test ids.
pub fn prepare_data(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let profile = DatasetProfile::builtin(&cfg.data.profile)?;
    let mut written = Vec::new();
    let mut ids = Vec::new();
    if cfg.data.paths.is_empty() {
        for i in 0..cfg.data.phantom_volumes as u64 {
            let seed = cfg.data.seed + i;
            let v = data::synth_phantom_channels(seed, data::PHANTOM_RAW_DIMS, cfg.data.phantom_slices, profile.channels)?;
            let path = out.join(format!("phantom-{seed}.{RAW_EXTENSION}"));
            data::write_raw(&path, &v)?;
            ids.push(format!("phantom-{seed}"));
            written.push(path);
        }
    } else {
        for p in volume_files(&cfg.data.paths)? {
            let v = data::load_volume(&p, &profile)?;
            let id = data::volume_id(&p);
            let path = out.join(format!("{id}.{RAW_EXTENSION}"));
            data::write_raw(&path, &v)?;
            ids.push(id);
            written.push(path);
        }
    }
    let (train, test) = eval::split_by_volume_id(&ids, cfg.data.test_fraction, cfg.data.seed)?;
    let split = serde_json::json!({ "profile": profile.name, "train": train, "test": test });
    let text = serde_json::to_string_pretty(&split).expect("split serializes") + "\n";
    write_atomic(&out.join("split.json"), text.as_bytes())?;
    Ok(written)
}

fn png_to_tensor(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.into(),
        reason: e.to_string(),
    })?;
    let g = img.to_luma16();
    let (w, h) = g.dimensions();
    Ok(Tensor::new(
        vec![1, h as usize, w as usize],
        g.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
    ))
}

fn tensor_to_png(path: &Path, img: &Tensor) -> Result<()> {
    let (m, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if m != 1 {
        return Err(Error::InvalidArgument(format!(
            "PNG output needs a single channel, image has {m}; write .{RAW_EXTENSION} instead"
        )));
    }
    let px: Vec<u16> = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, px).expect("buffer size matches");
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(path, &bytes)
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Super-resolves a PNG slice or every slice of a raw volume at scale `s`.
/// The output format follows the extension of `output`. Raw inputs are used
/// as stored (they must already be in `[0, 1]`).
pub fn infer(generator: &Generator, input: &Path, s: f64, output: &Path) -> Result<Vec<usize>> {
    crate::scale::validate_scale(s)?;
    let slices: Vec<Tensor> = if has_ext(input, "png") {
        vec![png_to_tensor(input)?]
    } else if has_ext(input, RAW_EXTENSION) {
        let v = data::read_raw(input)?;
        if v.voxels.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument(format!(
                "{} has values outside [0, 1]; normalize it first (prepare-data)",
                input.display()
            )));
        }
        (0..v.n_slices()).map(|i| v.slice(i)).collect()
    } else {
        return Err(Error::InvalidArgument(format!(
            "unsupported input {} (expected .png or .{RAW_EXTENSION})",
            input.display()
        )));
    };
    let outs: Vec<Tensor> = slices.iter().map(|x| generator.generate(x, s)).collect::<Result<_>>()?;
    if has_ext(output, "png") {
        if outs.len() != 1 {
            return Err(Error::InvalidArgument("PNG output holds one slice; use a .rvol output".into()));
        }
        tensor_to_png(output, &outs[0])?;
    } else if has_ext(output, RAW_EXTENSION) {
        let m = outs[0].shape()[0];
        let names = if m == 1 { vec!["sr".to_string()] } else { (0..m).map(|c| format!("m{c}")).collect() };
        data::write_raw(output, &Volume::new(Tensor::stack(&outs), names, (0.0, 1.0))?)?;
    } else {
        return Err(Error::InvalidArgument(format!(
            "unsupported output {} (expected .png or .{RAW_EXTENSION})",
            output.display()
        )));
    }
    Ok(outs[0].shape().to_vec())
}

/// The configuration stored in a checkpoint, when it was written by a run.
pub fn config_of_checkpoint(path: &Path) -> Result<Option<RunConfig>> {
    checkpoint_config(path)?.map(|t| RunConfig::from_toml_str(&t)).transpose()
}
