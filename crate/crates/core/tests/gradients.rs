//! Finite-difference checks of every differentiable path in double precision.

mod common;

use std::sync::Arc;

use arbsr::autograd::{Backend, Graph, Var};
use arbsr::critic::{critic_gradient_norm, Critic, CriticConfig, HeadMode};
use arbsr::generator::{forward, GeneratorConfig, Generator};
use arbsr::losses::{self, AdversarialLoss, GanVariant, SeededConvExtractor};
use arbsr::nn::InitScheme;
use arbsr::Tensor;
use common::{grad_rel_error, smooth_image, spread};

const H: f64 = 1e-6;
const TOL: f64 = 1e-3;

fn micro_generator() -> Generator {
    let cfg = GeneratorConfig {
        depth: 2,
        width: 4,
        meta_hidden: 8,
        ..GeneratorConfig::default()
    };
    Generator::new(cfg, 5, InitScheme::KaimingUniform).unwrap()
}

fn micro_critic(mode: HeadMode) -> Critic {
    let cfg = CriticConfig {
        n_blocks: 2,
        base_channels: 3,
        head_mode: mode,
        ..CriticConfig::default()
    };
    Critic::new(cfg, 1, 9, InitScheme::KaimingUniform).unwrap()
}

/// Loss of the generator output against a fixed target, as a function of
/// one named parameter.
fn generator_loss(gen: &Generator, name: &str, value: &Tensor, lr: &Tensor, hr: &Tensor, s: f64) -> f64 {
    let mut params = gen.params.clone();
    params.insert(name.to_string(), Arc::new(value.clone()));
    let g = Graph::new();
    let p = g.bind(&params);
    let x = g.leaf(lr.clone());
    let sr = forward(&g, &x, s, &p, &gen.config).unwrap();
    let t = g.leaf(hr.clone());
    let d = g.sub(sr, t);
    let sq = g.square(d);
    g.item(g.mean(sq))
}

#[test]
fn generator_parameters_and_input() {
    let gen = micro_generator();
    let s = 1.7;
    let lr = smooth_image(&[2, 1, 5, 4], 0.3);
    let hr = smooth_image(&[2, 1, 8, 6], 1.1);
    let g = Graph::new();
    let p = g.bind(&gen.params);
    let x = g.leaf(lr.clone());
    let sr = forward(&g, &x, s, &p, &gen.config).unwrap();
    let t = g.leaf(hr.clone());
    let d = g.sub(sr, t);
    let sq = g.square(d);
    let loss = g.mean(sq);
    let names: Vec<String> = gen.params.keys().cloned().collect();
    let mut wrt: Vec<Var> = names.iter().map(|n| p.get(n).unwrap()).collect();
    wrt.push(x);
    let grads = g.grad(loss, &wrt);
    for (i, name) in names.iter().enumerate() {
        let value = (*gen.params[name]).clone();
        let f = |v: &Tensor| generator_loss(&gen, name, v, &lr, &hr, s);
        let err = grad_rel_error(&f, &value, &g.value(grads[i]), &spread(value.numel(), 12), H);
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
    let f = |v: &Tensor| {
        let g = Graph::new();
        let p = g.bind(&gen.params);
        let sr = forward(&g, &g.leaf(v.clone()), s, &p, &gen.config).unwrap();
        let d = g.sub(sr, g.leaf(hr.clone()));
        let sq = g.square(d);
        g.item(g.mean(sq))
    };
    let err = grad_rel_error(&f, &lr, &g.value(grads[names.len()]), &spread(lr.numel(), 40), H);
    assert!(err < TOL, "input: relative error {err:e}");
}

/// Gradient of a scalar loss built from `(sr, hr)` with respect to `sr`.
fn check_sr_gradient(label: &str, build: &dyn Fn(&Graph, Var, Var) -> Var) {
    let sr0 = smooth_image(&[3, 1, 8, 8], 0.2);
    let hr0 = smooth_image(&[3, 1, 8, 8], 2.0);
    let g = Graph::new();
    let sr = g.leaf(sr0.clone());
    let hr = g.leaf(hr0.clone());
    let loss = build(&g, sr, hr);
    let grad = g.value(g.grad(loss, &[sr])[0]);
    let f = |v: &Tensor| {
        let g = Graph::new();
        let l = build(&g, g.leaf(v.clone()), g.leaf(hr0.clone()));
        g.item(l)
    };
    let err = grad_rel_error(&f, &sr0, &grad, &spread(sr0.numel(), 48), H);
    assert!(err < TOL, "{label}: relative error {err:e}");
}

#[test]
fn pixel_and_perceptual_losses() {
    check_sr_gradient("l1", &|g, sr, hr| losses::l1_loss(g, sr, hr).unwrap());
    let v = SeededConvExtractor::new(4);
    check_sr_gradient("perceptual", &|g, sr, hr| losses::perceptual_loss(g, sr, hr, &v).unwrap());
}

#[test]
fn adversarial_losses_both_sides() {
    for variant in GanVariant::ALL {
        let critic = micro_critic(variant.head_mode());
        let adv = AdversarialLoss::new(variant);
        let u = [0.25, 0.5, 0.8];
        check_sr_gradient(&format!("{variant} generator"), &|g, sr, hr| {
            let d = critic.bind(g);
            adv.generator_loss(g, &d, sr, hr).unwrap()
        });
        check_sr_gradient(&format!("{variant} critic"), &|g, sr, hr| {
            let d = critic.bind(g);
            adv.critic_loss(g, &d, sr, hr, &u).unwrap().loss
        });
    }
}

#[test]
fn critic_parameters_under_gradient_penalty() {
    let critic = micro_critic(HeadMode::LinearCritic);
    let sr0 = smooth_image(&[2, 1, 8, 8], 0.4);
    let hr0 = smooth_image(&[2, 1, 8, 8], 1.4);
    let adv = AdversarialLoss::new(GanVariant::Wgangp);
    let u = [0.3, 0.6];
    let loss_with = |name: &str, value: &Tensor| {
        let mut c = critic.clone();
        c.params.insert(name.to_string(), Arc::new(value.clone()));
        let g = Graph::new();
        let d = c.bind(&g);
        let l = adv.critic_loss(&g, &d, g.leaf(sr0.clone()), g.leaf(hr0.clone()), &u).unwrap().loss;
        g.item(l)
    };
    let g = Graph::new();
    let d = critic.bind(&g);
    let l = adv.critic_loss(&g, &d, g.leaf(sr0.clone()), g.leaf(hr0.clone()), &u).unwrap().loss;
    let vars = d.param_vars();
    let grads = g.grad(l, &vars.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    for ((name, _), gv) in vars.iter().zip(grads) {
        let value = (*critic.params[name]).clone();
        let f = |v: &Tensor| loss_with(name, v);
        let err = grad_rel_error(&f, &value, &g.value(gv), &spread(value.numel(), 10), H);
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn critic_gradient_norm_matches_finite_differences() {
    let critic = micro_critic(HeadMode::LinearCritic);
    let x = smooth_image(&[2, 1, 8, 8], 0.9);
    let g = Graph::new();
    let d = critic.bind(&g);
    let norms = critic_gradient_norm(&x, &d, &g).unwrap();
    let scores = |v: &Tensor| critic.scores(v).unwrap();
    for (s, norm) in norms.iter().enumerate() {
        let mut sq = 0.0;
        for i in 0..64 {
            let idx = s * 64 + i;
            let f = |v: &Tensor| scores(v).data()[s];
            let n = common::fd(&f, &x, idx, H);
            sq += n * n;
        }
        let rel = (norm - sq.sqrt()).abs() / norm.max(1e-12);
        assert!(rel < TOL, "sample {s}: {norm} vs {}", sq.sqrt());
    }
}
