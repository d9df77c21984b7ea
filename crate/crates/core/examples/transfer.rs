//! Pre-trains on single-channel data, then transfers to four modalities.
//! Layers whose shape depends on the channel count are re-initialized; the
//! rest carry over.

use arbsr::critic::CriticConfig;
use arbsr::data::{phantom_volumes, DatasetProfile, VolumePatchSource};
use arbsr::generator::{Generator, GeneratorConfig};
use arbsr::losses::{GanVariant, LossWeights, SeededConvExtractor};
use arbsr::nn::InitScheme;
use arbsr::train::{finetune, init_weights, save_checkpoint, warmup_train, Objective, TrainContext, TrainSchedule};
use std::sync::Arc;

fn source(profile: &str) -> arbsr::Result<VolumePatchSource> {
    Ok(VolumePatchSource {
        volumes: phantom_volumes(&DatasetProfile::builtin(profile)?, 2, 4, 0)?
            .into_iter()
            .map(|(_, v)| v)
            .collect(),
        patch: (24, 24),
        batch_size: 2,
        noise_std: 0.0,
    })
}

fn main() -> arbsr::Result<()> {
    let cfg = GeneratorConfig::tiny();
    let schedule = TrainSchedule {
        warmup_steps: 40,
        adv_steps: 0,
        finetune_steps: 20,
        batch_size: 2,
        lr0: 2e-3,
        scale_grid: vec![1.5, 2.0, 3.0],
        ..Default::default()
    };
    let pre = warmup_train(
        init_weights(&cfg, &schedule, InitScheme::KaimingUniform)?,
        &source("phantom")?,
        &schedule,
        &TrainContext::default(),
    )?;
    let dir = tempfile_dir();
    let ckpt = dir.join("pretrained.safetensors");
    save_checkpoint(&ckpt, &pre)?;

    let obj = Objective::new(GanVariant::Wgangp, LossWeights::default(), CriticConfig::desk())
        .with_extractor(Arc::new(SeededConvExtractor::new(0)));
    let tuned = finetune(&ckpt, &cfg, &source("phantom4")?, &schedule, &obj, &TrainContext::default())?;
    println!("channels: {} -> {}", pre.generator.config.channels, tuned.generator.config.channels);
    for (k, v) in &tuned.generator.params {
        let before = &pre.generator.params[k];
        let reinit = Generator::CHANNEL_LAYERS.iter().any(|p| k.starts_with(&format!("{p}.")));
        let note = if reinit { "re-initialized" } else { "transferred" };
        println!("{k:<24} {:?} -> {:?} {note}", before.shape(), v.shape());
    }
    let last = tuned.log.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!("fine-tune steps: {}, last total loss {last:.5}", tuned.log.len());
    std::fs::remove_dir_all(dir).ok();
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("arbsr-transfer-{}", std::process::id()));
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
