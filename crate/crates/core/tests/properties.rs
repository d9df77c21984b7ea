//! Structural invariants of the generator, critic and data pipeline under
//! random inputs.

mod common;

use proptest::prelude::*;

use arbsr::critic::{Critic, CriticConfig};
use arbsr::data::{patches::sample_patch_batch, phantom_volumes, DatasetProfile};
use arbsr::eval::split_by_volume_id;
use arbsr::generator::{Generator, GeneratorConfig};
use arbsr::nn::InitScheme;
use arbsr::scale::patch_dims;
use arbsr::Tensor;

fn micro() -> Generator {
    let cfg = GeneratorConfig {
        depth: 1,
        width: 4,
        meta_hidden: 8,
        ..GeneratorConfig::default()
    };
    Generator::new(cfg, 12, InitScheme::KaimingUniform).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn output_dims_follow_the_floor_law(h in 1usize..16, w in 1usize..16, q in 101usize..=400) {
        let s = q as f64 / 100.0;
        let g = micro();
        let lr = common::smooth_image(&[2, 1, h, w], 0.4);
        let out = g.generate(&lr, s).unwrap();
        prop_assert_eq!(out.shape(), &[2, 1, q * h / 100, q * w / 100]);
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn local_and_dense_upscale_agree(h in 1usize..9, w in 1usize..9, q in 101usize..=400, seed in 0u64..50) {
        let g = micro();
        let s = q as f64 / 100.0;
        let f = common::smooth_image(&[4, h, w], seed as f64);
        let local = g.meta_upscale_local(&f, s).unwrap();
        let dense = g.meta_upscale_dense(&f, s, usize::MAX).unwrap();
        let scale = dense.data().iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        prop_assert!(local.max_abs_diff(&dense) / scale < 1e-9);
    }

    #[test]
    fn batch_composition_does_not_change_generator_outputs(n in 2usize..4, q in 101usize..=400) {
        let g = micro();
        let s = q as f64 / 100.0;
        let batch = common::smooth_image(&[n, 1, 6, 5], 1.0);
        let together = g.generate(&batch, s).unwrap();
        for i in 0..n {
            let alone = g.generate(&batch.index_axis0(i), s).unwrap();
            prop_assert_eq!(together.index_axis0(i), alone);
        }
    }

    #[test]
    fn patch_batches_follow_the_floor_rules(q in 101usize..=400, patch in 16usize..40, seed in 0u64..100) {
        let s = q as f64 / 100.0;
        let vols: Vec<_> = phantom_volumes(&DatasetProfile::builtin("phantom").unwrap(), 2, 3, 0)
            .unwrap()
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        let b = sample_patch_batch(&vols, s, (patch, patch), 3, seed).unwrap();
        let lr = (patch * 100) / q;
        let hr = (lr * q) / 100;
        prop_assert_eq!(b.lr.shape(), &[3, 1, lr, lr]);
        prop_assert_eq!(b.hr.shape(), &[3, 1, hr, hr]);
        prop_assert_eq!(patch_dims(patch, s), (hr, lr));
        prop_assert!(b.lr.data().iter().chain(b.hr.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn splits_are_disjoint_and_cover_all_ids(n in 1usize..40, f in 0.0f64..0.95, seed in 0u64..100) {
        let ids: Vec<String> = (0..n).map(|i| format!("vol-{i}")).collect();
        let (train, test) = split_by_volume_id(&ids, f, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert!(train.iter().all(|t| !test.contains(t)));
        if n >= 2 && f > 0.0 {
            prop_assert!(!test.is_empty() && !train.is_empty());
        }
        let again = split_by_volume_id(&ids, f, seed).unwrap();
        prop_assert_eq!(again, (train, test));
    }
}

#[test]
fn critic_scores_do_not_couple_samples() {
    let c = Critic::new(CriticConfig::desk(), 1, 3, InitScheme::KaimingUniform).unwrap();
    let batch = common::smooth_image(&[3, 1, 24, 24], 0.2);
    let all = c.scores(&batch).unwrap();
    for i in 0..3 {
        let one = c.scores(&Tensor::stack(&[batch.index_axis0(i)])).unwrap();
        assert_eq!(one.data()[0].to_bits(), all.data()[i].to_bits());
    }
}

#[test]
fn same_seed_same_generator_and_different_seed_differs() {
    let cfg = GeneratorConfig::tiny();
    let a = Generator::new(cfg.clone(), 1, InitScheme::KaimingUniform).unwrap();
    let b = Generator::new(cfg.clone(), 1, InitScheme::KaimingUniform).unwrap();
    let c = Generator::new(cfg, 2, InitScheme::KaimingUniform).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
}

#[test]
fn out_of_range_scales_are_rejected() {
    let g = micro();
    let lr = common::smooth_image(&[1, 6, 6], 0.0);
    for s in [1.0, 0.5, 4.01, f64::NAN] {
        assert!(g.generate(&lr, s).is_err(), "s = {s}");
    }
    assert!(g.generate(&lr, 4.0).is_ok());
}
