//! Two-phase optimization: an L1 warm-up, then alternating critic and
//! generator updates on the combined objective, plus transfer fine-tuning.
//!
//! Every random draw of a step comes from a stream keyed by `(seed, step,
//! purpose)`, so a run resumed from a checkpoint replays the exact batches of
//! the uninterrupted run.

mod checkpoint;

pub use checkpoint::{
    checkpoint_config, load_checkpoint, load_generator, save_checkpoint, save_checkpoint_with_config, CHECKPOINT_FORMAT,
};

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Backend, Graph, Var};
use crate::critic::{Critic, CriticConfig};
use crate::data::PatchSource;
use crate::error::{Error, Result};
use crate::generator::{self, Generator, GeneratorConfig};
use crate::losses::{self, AdversarialLoss, FeatureExtractor, GanVariant, LossWeights};
use crate::nn::{self, InitScheme, ParamStore};
use crate::optim::Adam;
use crate::scale::{default_scale_grid, validate_scale};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub warmup_steps: u64,
    pub adv_steps: u64,
    pub finetune_steps: u64,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_halving_period: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Steps whose loss exceeds this value are skipped.
    pub loss_guard: f64,
    pub scale_grid: Vec<f64>,
    /// Draw scales uniformly from `[min, max]` of the grid instead of from
    /// the grid points.
    pub continuous_scales: bool,
    pub seed: u64,
    /// Checkpoint period in steps; 0 writes only at phase boundaries.
    pub checkpoint_every: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            warmup_steps: 100_000,
            adv_steps: 100_000,
            finetune_steps: 10_000,
            batch_size: 16,
            lr0: 1e-4,
            lr_halving_period: 50_000,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            loss_guard: 1e8,
            scale_grid: default_scale_grid(),
            continuous_scales: false,
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let k = |f: &str| format!("schedule.{f}");
        if self.batch_size == 0 {
            return Err(Error::config(k("batch_size"), "must be at least 1"));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::config(k("lr0"), "must be positive"));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::config(k("lr_halving_period"), "must be at least 1"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config(k("adam_betas"), "each beta must be in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config(k("adam_eps"), "must be positive"));
        }
        if self.loss_guard.is_nan() || self.loss_guard < 0.0 {
            return Err(Error::config(k("loss_guard"), "must be >= 0"));
        }
        if self.scale_grid.is_empty() {
            return Err(Error::config(k("scale_grid"), "must not be empty"));
        }
        for &s in &self.scale_grid {
            validate_scale(s).map_err(|_| Error::config(k("scale_grid"), format!("{s} is outside (1, 4]")))?;
        }
        Ok(())
    }
}

/// `lr0 · 2^(−⌊step / period⌋)`.
pub fn lr_at(step: u64, schedule: &TrainSchedule) -> f64 {
    let halvings = (step / schedule.lr_halving_period).min(1074) as i32;
    schedule.lr0 * 0.5f64.powi(halvings)
}

/// Uniform draw from the grid points, or from `[min, max]` when continuous.
pub fn sample_scale(rng: &mut impl Rng, grid: &[f64], continuous: bool) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("scale grid is empty".into()));
    }
    if continuous {
        let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return Ok(if lo == hi { lo } else { rng.random_range(lo..=hi) });
    }
    Ok(grid[rng.random_range(0..grid.len())])
}

/// Random stream for one purpose of one step.
pub fn step_rng(seed: u64, step: u64, purpose: &str) -> rand_chacha::ChaCha8Rng {
    nn::param_rng(seed, &format!("step/{step}/{purpose}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Adversarial,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::Warmup => "warmup",
            Self::Adversarial => "adversarial",
            Self::Finetune => "finetune",
        }
    }
}

/// One generator step of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub phase: Phase,
    pub scale: f64,
    pub l1: f64,
    pub adv: f64,
    pub perc: f64,
    pub total: f64,
    pub lr: f64,
    pub skipped: bool,
}

impl LogRow {
    pub const HEADER: &'static str = "step,phase,scale,l1,adv,perc,total,lr,skipped";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.phase.name(),
            self.scale,
            self.l1,
            self.adv,
            self.perc,
            self.total,
            self.lr,
            u8::from(self.skipped)
        )
    }
}

/// One critic update of the critic log.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticRow {
    pub step: u64,
    pub loss: f64,
    /// Gradient penalty (NaN when the variant has none).
    pub penalty: f64,
    /// Mean `‖∇D(Î)‖₂` over the batch (NaN when not measured).
    pub grad_norm: f64,
    pub skipped: bool,
}

impl CriticRow {
    pub const HEADER: &'static str = "step,loss,penalty,grad_norm,skipped";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step,
            self.loss,
            self.penalty,
            self.grad_norm,
            u8::from(self.skipped)
        )
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed steps over all phases; keys the per-step random streams.
    pub step: u64,
    pub phase: Phase,
    pub phase_step: u64,
    pub generator: Generator,
    pub critic: Option<Critic>,
    pub g_opt: Adam,
    pub c_opt: Adam,
    pub skipped_guard: u64,
    /// Non-finite steps in the current phase.
    pub skipped_nonfinite: u64,
    pub log: Vec<LogRow>,
    pub critic_log: Vec<CriticRow>,
}

impl TrainState {
    fn fresh(generator: Generator, schedule: &TrainSchedule) -> Self {
        Self {
            step: 0,
            phase: Phase::Warmup,
            phase_step: 0,
            generator,
            critic: None,
            g_opt: Adam::new(schedule.adam_betas, schedule.adam_eps),
            c_opt: Adam::new(schedule.adam_betas, schedule.adam_eps),
            skipped_guard: 0,
            skipped_nonfinite: 0,
            log: Vec::new(),
            critic_log: Vec::new(),
        }
    }
}

/// Fresh training state. Kaiming-normal is accepted but warned about: it is
/// known to destabilize this architecture.
pub fn init_weights(config: &GeneratorConfig, schedule: &TrainSchedule, scheme: InitScheme) -> Result<TrainState> {
    if scheme == InitScheme::KaimingNormal {
        log::warn!("kaiming-normal initialization has been observed to make training of this model diverge");
    }
    let g = Generator::new(config.clone(), schedule.seed, scheme)?;
    Ok(TrainState::fresh(g, schedule))
}

/// Adversarial-phase objective.
#[derive(Clone)]
pub struct Objective {
    pub weights: LossWeights,
    pub adversarial: AdversarialLoss,
    pub critic: CriticConfig,
    /// Critic updates per generator update.
    pub n_critic: usize,
    /// Optional WGAN weight clipping range `[−c, c]`.
    pub weight_clip: Option<f64>,
    pub extractor: Option<Arc<dyn FeatureExtractor>>,
}

impl Objective {
    pub fn new(variant: GanVariant, weights: LossWeights, critic: CriticConfig) -> Self {
        Self {
            weights,
            adversarial: AdversarialLoss::new(variant),
            critic,
            n_critic: 1,
            weight_clip: None,
            extractor: None,
        }
    }

    pub fn with_extractor(mut self, v: Arc<dyn FeatureExtractor>) -> Self {
        self.extractor = Some(v);
        self
    }

    fn critic_config(&self) -> CriticConfig {
        CriticConfig {
            head_mode: self.adversarial.variant.head_mode(),
            ..self.critic.clone()
        }
    }
}

/// Per-call knobs that are not part of the run configuration.
#[derive(Clone, Debug, Default)]
pub struct TrainContext {
    /// Logs and checkpoints go here when set.
    pub run_dir: Option<PathBuf>,
    /// Loss values substituted for the computed generator loss at the given
    /// global steps (fault injection for the guard).
    pub inject_loss: BTreeMap<u64, f64>,
    /// Stop once this many global steps have completed.
    pub stop_at: Option<u64>,
    pub init_scheme: Option<InitScheme>,
    /// Stored in every checkpoint written by the run.
    pub config_toml: Option<String>,
}

impl TrainContext {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            run_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn checkpoint_dir(&self) -> Option<PathBuf> {
        self.run_dir.as_ref().map(|d| d.join("checkpoints"))
    }
}

fn append_line(path: &Path, header: &str, line: &str) -> Result<()> {
    let new = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if new {
        text.push_str(header);
        text.push('\n');
    }
    text.push_str(line);
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Drops log rows of steps `>= step`, so a resumed run does not duplicate
/// rows written after the checkpoint it resumes from.
pub fn truncate_logs(run_dir: &Path, step: u64) -> Result<()> {
    for name in ["train_log.csv", "critic_log.csv"] {
        let path = run_dir.join(name);
        let Ok(text) = fs::read_to_string(&path) else { continue };
        let mut out = String::new();
        for (i, line) in text.lines().enumerate() {
            let keep = i == 0
                || line
                    .split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s < step);
            if keep {
                out.push_str(line);
                out.push('\n');
            }
        }
        crate::archive::write_atomic(&path, out.as_bytes())?;
    }
    Ok(())
}

fn collect_grads(g: &Graph, root: Var, vars: &[(String, Var)]) -> BTreeMap<String, Tensor> {
    let wrt: Vec<Var> = vars.iter().map(|(_, v)| *v).collect();
    let grads = g.grad(root, &wrt);
    vars.iter()
        .zip(grads)
        .map(|((name, _), gv)| (name.clone(), (*g.value(gv)).clone()))
        .collect()
}

fn bind_vars(g: &Graph, params: &ParamStore) -> (crate::autograd::Bound<Var>, Vec<(String, Var)>) {
    let bound = g.bind(params);
    let vars = bound.iter().map(|(k, v)| (k.clone(), *v)).collect();
    (bound, vars)
}

struct PhasePlan<'a> {
    phase: Phase,
    steps: u64,
    objective: Option<&'a Objective>,
}

/// Runs (or resumes) one phase.
fn run_phase(
    state: &mut TrainState,
    plan: PhasePlan<'_>,
    data: &dyn PatchSource,
    schedule: &TrainSchedule,
    ctx: &TrainContext,
) -> Result<()> {
    if state.phase > plan.phase || ctx.stop_at.is_some_and(|k| state.step >= k) {
        return Ok(());
    }
    if state.phase < plan.phase {
        state.phase = plan.phase;
        state.phase_step = 0;
        state.skipped_nonfinite = 0;
    }
    if data.channels() != state.generator.config.channels {
        return Err(Error::InvalidArgument(format!(
            "data has {} channels, generator expects {}",
            data.channels(),
            state.generator.config.channels
        )));
    }
    let budget = plan.steps / 100;
    let ckpt_dir = ctx.checkpoint_dir();
    if let Some(dir) = &ctx.run_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        truncate_logs(dir, state.step)?;
    }
    let warm = LossWeights::l1_only();
    while state.phase_step < plan.steps {
        if ctx.stop_at.is_some_and(|k| state.step >= k) {
            return Ok(());
        }
        let step = state.step;
        let lr = lr_at(state.phase_step, schedule);
        let s = sample_scale(&mut step_rng(schedule.seed, step, "scale"), &schedule.scale_grid, schedule.continuous_scales)?;
        let batch_seed: u64 = step_rng(schedule.seed, step, "batch").random();
        let batch = data.batch(s, batch_seed)?;

        let g = Graph::new();
        let x = g.leaf(batch.lr.clone());
        let hr = g.leaf(batch.hr.clone());
        let (gp, gvars) = bind_vars(&g, &state.generator.params);
        let sr = generator::forward(&g, &x, s, &gp, &state.generator.config)?;

        if let Some(obj) = plan.objective {
            let from = state.critic_log.len();
            critic_updates(state, obj, &g.value(sr), &batch.hr, step, lr, schedule)?;
            if let Some(dir) = &ctx.run_dir {
                for row in &state.critic_log[from..] {
                    append_line(&dir.join("critic_log.csv"), CriticRow::HEADER, &row.csv())?;
                }
            }
        }

        let weights = plan.objective.map_or(&warm, |o| &o.weights);
        let adv = plan.objective.map_or(AdversarialLoss::new(GanVariant::Vanilla), |o| o.adversarial);
        let bound_critic = state.critic.as_ref().map(|c| c.bind(&g));
        let d = bound_critic.as_ref().map(|b| b as &dyn crate::critic::Discriminator);
        let v = plan.objective.and_then(|o| o.extractor.as_deref());
        let parts = losses::combined_loss(&g, sr, hr, d, &adv, v, weights)?;
        let (mut total, l1, advv, perc) = parts.values(&g);
        if let Some(&forced) = ctx.inject_loss.get(&step) {
            total = forced;
        }
        let skipped = if !total.is_finite() {
            state.skipped_nonfinite += 1;
            log::warn!("step {step}: non-finite loss, update skipped");
            true
        } else if total > schedule.loss_guard {
            state.skipped_guard += 1;
            log::debug!("step {step}: loss {total:e} above guard, update skipped");
            true
        } else {
            let grads = collect_grads(&g, parts.total, &gvars);
            state.g_opt.step(&mut state.generator.params, &grads, lr)?;
            false
        };
        let row = LogRow {
            step,
            phase: plan.phase,
            scale: s,
            l1,
            adv: advv,
            perc,
            total,
            lr,
            skipped,
        };
        if let Some(dir) = &ctx.run_dir {
            append_line(&dir.join("train_log.csv"), LogRow::HEADER, &row.csv())?;
        }
        state.log.push(row);
        state.step += 1;
        state.phase_step += 1;
        if state.skipped_nonfinite > budget {
            return Err(Error::TrainingAborted(format!(
                "{} non-finite steps in {} phase exceed 1% of {} steps",
                state.skipped_nonfinite,
                plan.phase.name(),
                plan.steps
            )));
        }
        if let Some(dir) = &ckpt_dir {
            let periodic = schedule.checkpoint_every > 0 && state.step.is_multiple_of(schedule.checkpoint_every);
            if periodic && state.phase_step < plan.steps {
                save_checkpoint_with_config(&dir.join("latest.safetensors"), state, ctx.config_toml.as_deref())?;
            }
        }
    }
    if let Some(dir) = &ckpt_dir {
        let config = ctx.config_toml.as_deref();
        save_checkpoint_with_config(&dir.join(format!("{}.safetensors", plan.phase.name())), state, config)?;
        save_checkpoint_with_config(&dir.join("latest.safetensors"), state, config)?;
    }
    Ok(())
}

fn critic_updates(
    state: &mut TrainState,
    obj: &Objective,
    sr: &Tensor,
    hr: &Tensor,
    step: u64,
    lr: f64,
    schedule: &TrainSchedule,
) -> Result<()> {
    let Some(critic) = state.critic.as_mut() else {
        return Err(Error::InvalidArgument("adversarial phase without a critic".into()));
    };
    let n = sr.shape()[0];
    for k in 0..obj.n_critic.max(1) {
        let g = Graph::new();
        let (bound, vars) = bind_vars(&g, &critic.params);
        let bc = crate::critic::BoundCritic {
            config: &critic.config,
            params: bound,
        };
        let srv = g.leaf(sr.clone());
        let hrv = g.leaf(hr.clone());
        let u = losses::interpolation_weights(n, &mut step_rng(schedule.seed, step, &format!("gp/{k}")));
        let cl = obj.adversarial.critic_loss(&g, &bc, srv, hrv, &u)?;
        let loss = g.item(cl.loss);
        let skipped = !loss.is_finite() || loss > schedule.loss_guard;
        if !skipped {
            let grads = collect_grads(&g, cl.loss, &vars);
            state.c_opt.step(&mut critic.params, &grads, lr)?;
            if let Some(c) = obj.weight_clip {
                losses::clip_weights(&mut critic.params, c);
            }
        }
        let row = CriticRow {
            step,
            loss,
            penalty: cl.penalty.map_or(f64::NAN, |p| g.item(p)),
            grad_norm: cl
                .grad_norms
                .as_ref()
                .map_or(f64::NAN, |v| v.iter().sum::<f64>() / v.len() as f64),
            skipped,
        };
        state.critic_log.push(row);
    }
    Ok(())
}

/// L1-only phase of `schedule.warmup_steps` steps.
pub fn warmup_train(
    mut state: TrainState,
    data: &dyn PatchSource,
    schedule: &TrainSchedule,
    ctx: &TrainContext,
) -> Result<TrainState> {
    schedule.validate()?;
    let plan = PhasePlan {
        phase: Phase::Warmup,
        steps: schedule.warmup_steps,
        objective: None,
    };
    run_phase(&mut state, plan, data, schedule, ctx)?;
    Ok(state)
}

fn ensure_critic(state: &mut TrainState, obj: &Objective, schedule: &TrainSchedule, ctx: &TrainContext) -> Result<()> {
    let cfg = obj.critic_config();
    match &mut state.critic {
        Some(c) => c.config.head_mode = cfg.head_mode,
        None => {
            let scheme = ctx.init_scheme.unwrap_or(InitScheme::KaimingUniform);
            state.critic = Some(Critic::new(cfg, state.generator.config.channels, schedule.seed, scheme)?);
        }
    }
    Ok(())
}

fn adversarial_phase(
    mut state: TrainState,
    phase: Phase,
    steps: u64,
    data: &dyn PatchSource,
    schedule: &TrainSchedule,
    obj: &Objective,
    ctx: &TrainContext,
) -> Result<TrainState> {
    schedule.validate()?;
    obj.weights.validate()?;
    if ctx.stop_at.is_some_and(|k| state.step >= k) {
        return Ok(state);
    }
    ensure_critic(&mut state, obj, schedule, ctx)?;
    let plan = PhasePlan {
        phase,
        steps,
        objective: Some(obj),
    };
    run_phase(&mut state, plan, data, schedule, ctx)?;
    Ok(state)
}

/// Alternating critic / generator phase of `schedule.adv_steps` steps.
pub fn adversarial_train(
    state: TrainState,
    data: &dyn PatchSource,
    schedule: &TrainSchedule,
    obj: &Objective,
    ctx: &TrainContext,
) -> Result<TrainState> {
    adversarial_phase(state, Phase::Adversarial, schedule.adv_steps, data, schedule, obj, ctx)
}

/// Loads a pretrained checkpoint, adapts it to the data's channel count when
/// needed and trains `schedule.finetune_steps` steps on the combined loss.
/// `expected` carries the depth and width the caller was configured for;
/// a checkpoint that disagrees is rejected rather than reshaped.
pub fn finetune(
    checkpoint: &Path,
    expected: &GeneratorConfig,
    data: &dyn PatchSource,
    schedule: &TrainSchedule,
    obj: &Objective,
    ctx: &TrainContext,
) -> Result<TrainState> {
    let loaded = load_checkpoint(checkpoint)?;
    let state = adapt_for_finetune(loaded, expected, data.channels(), schedule, ctx)?;
    adversarial_phase(state, Phase::Finetune, schedule.finetune_steps, data, schedule, obj, ctx)
}

/// Transfer step of [`finetune`]: checks compatibility, re-initializes the
/// channel-dependent layers and resets the optimizers.
pub fn adapt_for_finetune(
    loaded: TrainState,
    expected: &GeneratorConfig,
    channels: usize,
    schedule: &TrainSchedule,
    ctx: &TrainContext,
) -> Result<TrainState> {
    let have = &loaded.generator.config;
    for (key, a, b) in [
        ("model.depth", have.depth, expected.depth),
        ("model.width", have.width, expected.width),
        ("model.kernel_size", have.kernel_size, expected.kernel_size),
        ("model.meta_hidden", have.meta_hidden, expected.meta_hidden),
    ] {
        if a != b {
            return Err(Error::config(key, format!("checkpoint has {a}, config requires {b}")));
        }
    }
    let scheme = ctx.init_scheme.unwrap_or(InitScheme::KaimingUniform);
    let generator = loaded.generator.with_channels(channels, schedule.seed, scheme)?;
    let critic = match loaded.critic {
        Some(c) if c.in_channels != channels => Some(adapt_critic(&c, channels, schedule.seed, scheme)?),
        other => other,
    };
    let mut state = TrainState::fresh(generator, schedule);
    state.step = loaded.step;
    state.phase = Phase::Adversarial;
    state.critic = critic;
    Ok(state)
}

/// Critic with a re-initialized first conv for a new channel count.
fn adapt_critic(c: &Critic, channels: usize, seed: u64, scheme: InitScheme) -> Result<Critic> {
    let shapes: BTreeMap<_, _> = c.config.param_shapes(channels).into_iter().collect();
    let mut params = c.params.clone();
    let first = "critic.blocks.0.conv1";
    nn::init_layer(&mut params, first, &shapes[&format!("{first}.weight")], scheme, seed);
    Critic::from_params(c.config.clone(), channels, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_phantom, FixedPatchSource};
    use rand::SeedableRng;

    #[test]
    fn halving_schedule() {
        let s = TrainSchedule::default();
        assert_eq!(lr_at(0, &s), 1e-4);
        assert_eq!(lr_at(50_000, &s), 5e-5);
        assert_eq!(lr_at(120_000, &s), 2.5e-5);
    }

    #[test]
    fn singleton_grid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(sample_scale(&mut rng, &[2.0], false).unwrap(), 2.0);
        }
        assert!(sample_scale(&mut rng, &[], false).is_err());
        let bad = TrainSchedule {
            scale_grid: vec![2.0, 4.5],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_guard_skips_everything() {
        let vols = vec![synth_phantom(3, (40, 40), 6).unwrap()];
        let data = FixedPatchSource::from_volumes(&vols, 24, 2, 1).unwrap();
        let schedule = TrainSchedule {
            warmup_steps: 3,
            batch_size: 2,
            loss_guard: 0.0,
            scale_grid: vec![2.0],
            ..Default::default()
        };
        let state = init_weights(&GeneratorConfig::tiny(), &schedule, InitScheme::KaimingUniform).unwrap();
        let before = state.generator.params.clone();
        let after = warmup_train(state, &data, &schedule, &TrainContext::default()).unwrap();
        assert_eq!(after.generator.params, before);
        assert!(after.log.iter().all(|r| r.skipped));
        assert_eq!(after.skipped_guard, 3);
    }
}
