//! Training-loop behaviour: descent, loss-weight equivalences, the loss guard,
//! resume across phases and the transfer checks.

use std::collections::BTreeMap;
use std::sync::Arc;

use arbsr::critic::CriticConfig;
use arbsr::data::{synth_phantom, FixedPatchSource, VolumePatchSource};
use arbsr::generator::GeneratorConfig;
use arbsr::losses::{GanVariant, LossWeights, SeededConvExtractor};
use arbsr::nn::{store_digest, InitScheme};
use arbsr::train::{
    adversarial_train, finetune, init_weights, load_checkpoint, save_checkpoint, warmup_train, Objective, Phase,
    TrainContext, TrainSchedule, TrainState,
};
use arbsr::Error;

fn data() -> FixedPatchSource {
    let vols = vec![synth_phantom(21, (48, 48), 6).unwrap()];
    FixedPatchSource::from_volumes(&vols, 24, 2, 3).unwrap()
}

fn random_patches() -> VolumePatchSource {
    VolumePatchSource {
        volumes: vec![synth_phantom(22, (48, 48), 6).unwrap()],
        patch: (24, 24),
        batch_size: 2,
        noise_std: 0.0,
    }
}

fn schedule(warmup: u64, adv: u64) -> TrainSchedule {
    TrainSchedule {
        warmup_steps: warmup,
        adv_steps: adv,
        finetune_steps: 2,
        batch_size: 2,
        lr0: 2e-3,
        lr_halving_period: 1000,
        scale_grid: vec![1.5, 2.0, 3.0],
        seed: 4,
        ..Default::default()
    }
}

fn fresh(s: &TrainSchedule) -> TrainState {
    init_weights(&GeneratorConfig::tiny(), s, InitScheme::KaimingUniform).unwrap()
}

fn objective(variant: GanVariant, weights: LossWeights) -> Objective {
    Objective::new(variant, weights, CriticConfig::desk()).with_extractor(Arc::new(SeededConvExtractor::new(2)))
}

#[test]
fn warmup_reduces_the_l1_loss() {
    let s = schedule(150, 0);
    let state = warmup_train(fresh(&s), &data(), &s, &TrainContext::default()).unwrap();
    let mean = |rows: &[arbsr::train::LogRow]| rows.iter().map(|r| r.l1).sum::<f64>() / rows.len() as f64;
    let first = mean(&state.log[..15]);
    let last = mean(&state.log[135..]);
    assert!(last < 0.5 * first, "L1 went from {first} to {last}");
    assert!(state.log.iter().all(|r| r.phase == Phase::Warmup && r.adv == 0.0 && r.perc == 0.0));
}

#[test]
fn zero_adversarial_and_perceptual_weights_reproduce_the_warmup() {
    let s = schedule(12, 12);
    let warm = {
        let s = TrainSchedule { adv_steps: 0, ..s.clone() };
        warmup_train(fresh(&s), &data(), &s, &TrainContext::default()).unwrap()
    };
    let adv = {
        let s = TrainSchedule {
            warmup_steps: 0,
            ..s.clone()
        };
        let obj = objective(GanVariant::Wgangp, LossWeights::l1_only());
        let st = warmup_train(fresh(&s), &data(), &s, &TrainContext::default()).unwrap();
        adversarial_train(st, &data(), &s, &obj, &TrainContext::default()).unwrap()
    };
    assert_eq!(adv.phase, Phase::Adversarial);
    assert!(adv.critic.is_some());
    assert_eq!(store_digest(&warm.generator.params), store_digest(&adv.generator.params));
}

#[test]
fn every_variant_trains_without_guard_skips() {
    for variant in GanVariant::ALL {
        let s = schedule(2, 4);
        let mut obj = objective(variant, LossWeights::default());
        if variant == GanVariant::Wgan {
            obj.weight_clip = Some(0.01);
            obj.n_critic = 2;
        }
        let st = warmup_train(fresh(&s), &random_patches(), &s, &TrainContext::default()).unwrap();
        let st = adversarial_train(st, &random_patches(), &s, &obj, &TrainContext::default()).unwrap();
        assert_eq!(st.skipped_guard, 0, "{variant}");
        assert_eq!(st.log.len(), 6);
        assert!(st.log.iter().all(|r| r.total.is_finite()), "{variant}");
        let expect_critic_rows = if variant == GanVariant::Wgan { 8 } else { 4 };
        assert_eq!(st.critic_log.len(), expect_critic_rows, "{variant}");
        if variant == GanVariant::Wgan {
            let c = st.critic.as_ref().unwrap();
            let max = c.params.values().flat_map(|t| t.data().to_vec()).fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max <= 0.01, "clipped critic weights reach {max}");
        }
    }
}

#[test]
fn guard_skips_injected_spikes_and_leaves_weights_alone() {
    let s = schedule(6, 0);
    let spike = TrainContext {
        inject_loss: BTreeMap::from([(2, 1e12)]),
        ..Default::default()
    };
    let through_step_2 = TrainContext {
        stop_at: Some(2),
        ..Default::default()
    };
    let before = warmup_train(fresh(&s), &data(), &s, &through_step_2).unwrap();
    let spiked = warmup_train(before.clone(), &data(), &s, &spike).unwrap();
    assert_eq!(spiked.skipped_guard, 1);
    assert!(spiked.log[2].skipped);
    assert_eq!(spiked.log.iter().filter(|r| r.skipped).count(), 1);

    // The skipped step leaves the parameters and the optimizer untouched.
    let one_more = TrainContext {
        inject_loss: BTreeMap::from([(2, 1e12)]),
        stop_at: Some(3),
        ..Default::default()
    };
    let after_skip = warmup_train(before.clone(), &data(), &s, &one_more).unwrap();
    assert_eq!(after_skip.generator.params, before.generator.params);
    assert_eq!(after_skip.g_opt, before.g_opt);
}

#[test]
fn non_finite_losses_are_skipped_until_the_budget_runs_out() {
    let s = schedule(200, 0);
    let two = TrainContext {
        inject_loss: BTreeMap::from([(5, f64::NAN), (9, f64::INFINITY)]),
        ..Default::default()
    };
    let st = warmup_train(fresh(&s), &data(), &s, &TrainContext { stop_at: Some(20), ..two }).unwrap();
    assert_eq!(st.skipped_nonfinite, 2);

    let three = TrainContext {
        inject_loss: BTreeMap::from([(1, f64::NAN), (2, f64::NAN), (3, f64::NAN)]),
        ..Default::default()
    };
    match warmup_train(fresh(&s), &data(), &s, &three) {
        Err(Error::TrainingAborted(_)) => {}
        other => panic!("expected an abort, got {:?}", other.map(|s| s.step)),
    }
}

#[test]
fn resume_at_the_phase_boundary_is_bit_exact() {
    let s = schedule(5, 5);
    let obj = objective(GanVariant::Ragan, LossWeights::default());
    let run = |st: TrainState, ctx: &TrainContext| {
        let st = warmup_train(st, &random_patches(), &s, ctx).unwrap();
        adversarial_train(st, &random_patches(), &s, &obj, ctx).unwrap()
    };
    let straight = run(fresh(&s), &TrainContext::default());
    let dir = tempfile::tempdir().unwrap();
    for cut in [3, 5, 7] {
        let partial = run(
            fresh(&s),
            &TrainContext {
                stop_at: Some(cut),
                ..Default::default()
            },
        );
        let p = dir.path().join(format!("cut{cut}.safetensors"));
        save_checkpoint(&p, &partial).unwrap();
        let resumed = run(load_checkpoint(&p).unwrap(), &TrainContext::default());
        assert_eq!(resumed.generator, straight.generator, "cut at {cut}");
        assert_eq!(resumed.critic, straight.critic, "cut at {cut}");
        assert_eq!(resumed.g_opt, straight.g_opt, "cut at {cut}");
        assert_eq!(resumed.c_opt, straight.c_opt, "cut at {cut}");
        assert_eq!(resumed.log[..], straight.log[cut as usize..], "cut at {cut}");
    }
}

#[test]
fn run_directory_receives_logs_and_checkpoints() {
    let s = TrainSchedule {
        checkpoint_every: 2,
        ..schedule(3, 3)
    };
    let dir = tempfile::tempdir().unwrap();
    let ctx = TrainContext::in_dir(dir.path());
    let obj = objective(GanVariant::Vanilla, LossWeights::default());
    let st = warmup_train(fresh(&s), &data(), &s, &ctx).unwrap();
    let st = adversarial_train(st, &data(), &s, &obj, &ctx).unwrap();
    let ckpts = dir.path().join("checkpoints");
    for name in ["warmup", "adversarial", "latest"] {
        assert!(ckpts.join(format!("{name}.safetensors")).exists(), "{name}");
    }
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
    assert_eq!(load_checkpoint(&ckpts.join("latest.safetensors")).unwrap().step, st.step);
}

#[test]
fn finetune_rejects_a_depth_mismatch() {
    let s = schedule(1, 0);
    let st = warmup_train(fresh(&s), &data(), &s, &TrainContext::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pre.safetensors");
    save_checkpoint(&p, &st).unwrap();
    let deeper = GeneratorConfig {
        depth: GeneratorConfig::tiny().depth + 1,
        ..GeneratorConfig::tiny()
    };
    let obj = objective(GanVariant::Wgangp, LossWeights::default());
    match finetune(&p, &deeper, &data(), &s, &obj, &TrainContext::default()) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "model.depth"),
        other => panic!("expected a model.depth error, got {:?}", other.map(|s| s.step)),
    }
}

#[test]
fn finetune_on_the_same_channels_keeps_every_weight_before_training() {
    let s = TrainSchedule {
        finetune_steps: 0,
        ..schedule(2, 0)
    };
    let st = warmup_train(fresh(&s), &data(), &s, &TrainContext::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pre.safetensors");
    save_checkpoint(&p, &st).unwrap();
    let obj = objective(GanVariant::Wgangp, LossWeights::default());
    let tuned = finetune(&p, &GeneratorConfig::tiny(), &data(), &s, &obj, &TrainContext::default()).unwrap();
    assert_eq!(tuned.generator.params, st.generator.params);
    assert_eq!(tuned.phase, Phase::Finetune);
    assert_eq!(tuned.g_opt.t, 0);
}
