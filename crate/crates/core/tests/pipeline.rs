//! Evaluation harness and command-line workflow, end to end.

use std::path::Path;
use std::process::{Command, Output};

use arbsr::data::{phantom_volumes, DatasetProfile, Volume};
use arbsr::eval::{self, render_comparison, render_report, Bicubic, EvalPlan, Identity, MetricSet};
use arbsr::generator::{Generator, GeneratorConfig};
use arbsr::metrics::{MetricReport, SeededConvEmbedder};
use arbsr::nn::{store_digest, InitScheme};

fn vols(profile: &str, n: usize) -> Vec<Volume> {
    phantom_volumes(&DatasetProfile::builtin(profile).unwrap(), n, 3, 5)
        .unwrap()
        .into_iter()
        .map(|(_, v)| v)
        .collect()
}

fn no_fid(grid: Vec<f64>) -> EvalPlan {
    let mut plan = EvalPlan::new(grid);
    plan.metrics = MetricSet {
        fid: false,
        ..MetricSet::default()
    };
    plan
}

fn arbsr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arbsr"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .env("ARBSR_DETERMINISTIC", "1")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn evaluation_does_not_touch_the_model() {
    let g = Generator::new(GeneratorConfig::tiny(), 3, InitScheme::KaimingUniform).unwrap();
    let before = store_digest(&g.params);
    let embedder = SeededConvEmbedder::new(1);
    let report = eval::evaluate(&EvalPlan::new(vec![2.0, 3.5]), &g, &vols("phantom", 1), Some(&embedder)).unwrap();
    assert_eq!(store_digest(&g.params), before);
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows.iter().all(|r| r.psnr.is_finite() && r.ssim.is_finite() && r.fid.is_finite()));
}

#[test]
fn identity_sanity_mode_scores_perfectly() {
    let mut plan = no_fid(vec![2.0]);
    plan.undegraded = true;
    let r = eval::evaluate(&plan, &Identity, &vols("phantom", 1), None).unwrap();
    assert_eq!(r.rows[0].psnr, f64::INFINITY);
    assert!((r.rows[0].ssim - 1.0).abs() < 1e-12);
}

#[test]
fn multi_channel_reports_carry_per_modality_columns() {
    let r = eval::evaluate(&no_fid(vec![2.0]), &Bicubic, &vols("phantom4", 1), None).unwrap();
    assert_eq!(r.modality_names.len(), 4);
    assert_eq!(r.rows[0].per_modality.len(), 4);
    let header = r.to_csv().lines().next().unwrap().to_string();
    assert!(header.contains("psnr_t1") && header.contains("ssim_flair"), "{header}");
    let back = MetricReport::from_csv(&r.to_csv()).unwrap();
    assert_eq!(back.to_csv(), r.to_csv());
}

#[test]
fn rendered_reports_are_byte_stable() {
    let r = eval::evaluate(&no_fid(vec![1.5, 2.0, 4.0]), &Bicubic, &vols("phantom", 2), None).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = render_report(&r, a.path(), "bicubic").unwrap();
    let fb = render_report(&r, b.path(), "bicubic").unwrap();
    for (x, y) in [(&fa.csv, &fb.csv), (&fa.sidecar, &fb.sidecar), (&fa.plot, &fb.plot)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let csv = std::fs::read_to_string(&fa.csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 1);
    let (table, _) = render_comparison(&[("a".into(), r.clone()), ("b".into(), r)], a.path(), "cmp").unwrap();
    let head = std::fs::read_to_string(table).unwrap();
    assert!(head.starts_with("scale,a_psnr,a_ssim,a_fid,b_psnr"));
}

#[test]
fn width_sweep_counts_increase() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("widths.toml");
    std::fs::write(&sweep, "[sweep]\n\"model.width\" = [4, 8, 16, 32, 64, 128]\n").unwrap();
    let out = ok(&arbsr(&["count-params", "--config", sweep.to_str().unwrap()], dir.path()));
    let counts: Vec<usize> = out.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(counts.len(), 6);
    assert!(counts.windows(2).all(|p| p[0] < p[1]), "{counts:?}");
}

#[test]
fn bad_configs_fail_with_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[model]\nwidht = 8\n", "model.widht"),
        ("[schedule]\nlr0 = -1.0\n", "schedule.lr0"),
        ("[model]\ndepth = \"deep\"\n", "model.depth"),
    ];
    for (i, (text, key)) in cases.iter().enumerate() {
        let p = dir.path().join(format!("bad{i}.toml"));
        std::fs::write(&p, text).unwrap();
        let out = arbsr(&["count-params", "--config", p.to_str().unwrap()], dir.path());
        assert!(!out.status.success(), "{text}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(key), "{key} missing from: {err}");
    }
}

#[test]
fn train_evaluate_infer_and_report_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let cfg = cwd.join("tiny.toml");
    std::fs::write(
        &cfg,
        "preset = \"tiny\"\n[eval]\nscale_grid = [2.0, 3.0]\n[data]\nphantom_volumes = 3\nphantom_slices = 3\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    ok(&arbsr(&["train", "--config", cfg, "--run", "run", "--steps", "8"], cwd));
    let latest = cwd.join("run/checkpoints/latest.safetensors");
    assert!(latest.exists());
    let state = arbsr::train::load_checkpoint(&latest).unwrap();
    assert_eq!(state.step, 8);

    // The run remembers its configuration.
    let csv = ok(&arbsr(&["evaluate", "--run", "run"], cwd));
    assert!(csv.starts_with("scale,psnr,ssim,fid\n2,"), "{csv}");
    ok(&arbsr(&["evaluate", "--run", "run", "--bicubic"], cwd));
    for f in ["model.csv", "model.json", "model.plot.csv", "bicubic.csv"] {
        assert!(cwd.join("run/reports").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cwd.join("run/manifest.json")).unwrap()).unwrap();
    assert!(manifest["reports"].as_array().unwrap().iter().any(|r| r == "reports/model.csv"));

    ok(&arbsr(
        &["report", "run/reports/model.csv", "bicubic=run/reports/bicubic.csv", "--out", "cmp"],
        cwd,
    ));
    assert!(cwd.join("cmp/comparison.csv").exists() && cwd.join("cmp/comparison.plot.csv").exists());

    // 16-bit grayscale PNG in, PNG of ⌊s·h⌋ × ⌊s·w⌋ out.
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_fn(17, 13, |x, y| image::Luma([((x * 3000 + y * 1000) % 65535) as u16]));
    img.save(cwd.join("slice.png")).unwrap();
    ok(&arbsr(
        &["infer", "--ckpt", "run/checkpoints/latest.safetensors", "--in", "slice.png", "--out", "up.png", "--scale", "2.5"],
        cwd,
    ));
    let up = image::open(cwd.join("up.png")).unwrap();
    assert_eq!((up.width(), up.height()), (42, 32));

    // A run directory refuses a different model.
    let other = cwd.join("other.toml");
    std::fs::write(&other, "preset = \"tiny\"\n[model]\ndepth = 2\n").unwrap();
    let out = arbsr(&["train", "--config", other.to_str().unwrap(), "--run", "run", "--steps", "2"], cwd);
    assert!(!out.status.success());
}

#[test]
fn prepared_volumes_round_trip_through_inference() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(&arbsr(&["prepare-data", "--config", "tiny", "--out", "data"], cwd));
    let split: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cwd.join("data/split.json")).unwrap()).unwrap();
    assert!(split["test"].as_array().is_some_and(|t| !t.is_empty()));
    let g = Generator::new(GeneratorConfig::tiny(), 1, InitScheme::KaimingUniform).unwrap();
    let v = arbsr::data::read_raw(&cwd.join("data/phantom-0.rvol")).unwrap();
    let normalized = Volume::new(
        arbsr::data::normalize(&v.voxels).unwrap().0,
        v.modality_names.clone(),
        (0.0, 1.0),
    )
    .unwrap();
    let small = cwd.join("small.rvol");
    arbsr::data::write_raw(&small, &normalized).unwrap();
    let shape = arbsr::run::infer(&g, &small, 1.5, &cwd.join("big.rvol")).unwrap();
    let (h, w) = v.slice_dims();
    assert_eq!(shape, vec![1, h * 3 / 2, w * 3 / 2]);
    let big = arbsr::data::read_raw(&cwd.join("big.rvol")).unwrap();
    assert_eq!(big.n_slices(), v.n_slices());
}
