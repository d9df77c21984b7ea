//! Scale-sweep evaluation, the bicubic and up-and-down baselines, and report
//! files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::write_atomic;
use crate::data::{bicubic_resize, degrade_to, resize_to, Volume};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::metrics::{self, fmt_num, fmt_scale, Embedder, MetricReport, MetricRow};
use crate::scale::{patch_dims, scaled_len, validate_scale};
use crate::tensor::Tensor;

/// Anything that maps an LR image `[m, h, w]` to an SR image
/// `[m, ⌊s·h⌋, ⌊s·w⌋]`.
pub trait SrModel: Sync {
    fn name(&self) -> &str;
    fn super_resolve(&self, lr: &Tensor, s: f64) -> Result<Tensor>;
}

impl SrModel for Generator {
    fn name(&self) -> &str {
        "generator"
    }

    fn super_resolve(&self, lr: &Tensor, s: f64) -> Result<Tensor> {
        validate_scale(s)?;
        self.generate(lr, s)
    }
}

/// `clamp(bicubic_resize(lr, s), 0, 1)`.
pub fn bicubic_baseline(lr: &Tensor, s: f64) -> Result<Tensor> {
    validate_scale(s)?;
    Ok(bicubic_resize(lr, s)?.map(|v| v.clamp(0.0, 1.0)))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Bicubic;

impl SrModel for Bicubic {
    fn name(&self) -> &str {
        "bicubic"
    }

    fn super_resolve(&self, lr: &Tensor, s: f64) -> Result<Tensor> {
        bicubic_baseline(lr, s)
    }
}

type FixedFn = dyn Fn(&Tensor, u32) -> Result<Tensor> + Send + Sync;

/// An external model that only supports a few integer scales.
pub struct FixedScaleModelHandle {
    name: String,
    scales: Vec<u32>,
    run: Box<FixedFn>,
}

impl FixedScaleModelHandle {
    pub fn new(
        name: impl Into<String>,
        scales: Vec<u32>,
        run: impl Fn(&Tensor, u32) -> Result<Tensor> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            scales,
            run: Box::new(run),
        }
    }

    pub fn scales(&self) -> &[u32] {
        &self.scales
    }

    /// Runs the wrapped model at one of its declared scales.
    pub fn run_at(&self, lr: &Tensor, scale: u32) -> Result<Tensor> {
        if !self.scales.contains(&scale) {
            return Err(Error::InvalidArgument(format!(
                "model `{}` supports scales {:?}, not x{scale}",
                self.name, self.scales
            )));
        }
        (self.run)(lr, scale)
    }
}

/// SR at `⌈s⌉` with the fixed-scale model, then a bicubic resize to
/// `(⌊s·h⌋, ⌊s·w⌋)`. At integer `s` the model output is returned unchanged.
pub fn up_and_down(handle: &FixedScaleModelHandle, lr: &Tensor, s: f64) -> Result<Tensor> {
    validate_scale(s)?;
    let ceil = s.ceil() as u32;
    let up = handle.run_at(lr, ceil)?;
    let shape = lr.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let target = (scaled_len(h, s), scaled_len(w, s));
    let got = (up.shape()[up.shape().len() - 2], up.shape()[up.shape().len() - 1]);
    if got == target {
        return Ok(up);
    }
    Ok(resize_to(&up, target)?.map(|v| v.clamp(0.0, 1.0)))
}

impl SrModel for FixedScaleModelHandle {
    fn name(&self) -> &str {
        &self.name
    }

    fn super_resolve(&self, lr: &Tensor, s: f64) -> Result<Tensor> {
        up_and_down(self, lr, s)
    }
}

/// Returns its input unchanged; only meaningful with [`EvalPlan::undegraded`].
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl SrModel for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn super_resolve(&self, lr: &Tensor, _s: f64) -> Result<Tensor> {
        Ok(lr.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSet {
    pub psnr: bool,
    pub ssim: bool,
    pub fid: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        Self {
            psnr: true,
            ssim: true,
            fid: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub scale_grid: Vec<f64>,
    pub metrics: MetricSet,
    /// Sanity mode: the model receives the HR slice itself and its output is
    /// compared at HR size.
    pub undegraded: bool,
    /// Copied into the report metadata.
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl EvalPlan {
    pub fn new(scale_grid: Vec<f64>) -> Self {
        Self {
            scale_grid,
            metrics: MetricSet::default(),
            undegraded: false,
            metadata: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_grid.is_empty() {
            return Err(Error::config("eval.scale_grid", "must not be empty"));
        }
        for &s in &self.scale_grid {
            validate_scale(s).map_err(|_| Error::config("eval.scale_grid", format!("scale {s} outside (1, 4]")))?;
        }
        Ok(())
    }
}

/// Splits volume ids into disjoint `(train, test)` sets. Ids are ranked by
/// a seeded hash and the first `round(n · test_fraction)` go to test (at
/// least one when the fraction is positive and there are two or more ids).
/// Both outputs keep the input order.
pub fn split_by_volume_id(ids: &[String], test_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config("data.test_fraction", "must be within [0, 1)"));
    }
    let n = ids.len();
    let mut n_test = (n as f64 * test_fraction).round() as usize;
    if test_fraction > 0.0 && n >= 2 {
        n_test = n_test.clamp(1, n - 1);
    }
    let key = |id: &String| {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(id.as_bytes());
        h.finalize().to_vec()
    };
    let mut ranked: Vec<&String> = ids.iter().collect();
    ranked.sort_by_key(|id| (key(id), (*id).clone()));
    let test_set: Vec<&String> = ranked[..n_test].to_vec();
    let (test, train): (Vec<String>, Vec<String>) = ids.iter().cloned().partition(|id| test_set.contains(&id));
    Ok((train, test))
}

/// `(⌊s·⌊h/s⌋⌋, ⌊s·⌊w/s⌋⌋)`: the largest HR size whose LR counterpart maps back
/// to it exactly.
pub fn eval_hr_dims(h: usize, w: usize, s: f64) -> (usize, usize) {
    (patch_dims(h, s).0, patch_dims(w, s).0)
}

fn crop_top_left(img: &Tensor, dims: (usize, usize)) -> Tensor {
    let (m, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if (h, w) == dims {
        return img.clone();
    }
    let mut out = Vec::with_capacity(m * dims.0 * dims.1);
    for c in 0..m {
        for y in 0..dims.0 {
            let row = (c * h + y) * w;
            out.extend_from_slice(&img.data()[row..row + dims.1]);
        }
    }
    Tensor::new(vec![m, dims.0, dims.1], out)
}

fn channel(img: &Tensor, c: usize) -> Tensor {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    Tensor::new(vec![h, w], img.data()[c * h * w..(c + 1) * h * w].to_vec())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn eval_scale(
    plan: &EvalPlan,
    model: &dyn SrModel,
    slices: &[Tensor],
    embedder: Option<&dyn Embedder>,
    s: f64,
) -> Result<MetricRow> {
    let m = slices[0].shape()[0];
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    let mut per_mod = vec![(Vec::new(), Vec::new()); if m > 1 { m } else { 0 }];
    let mut srs = Vec::new();
    let mut hrs = Vec::new();
    for slice in slices {
        let (h, w) = (slice.shape()[1], slice.shape()[2]);
        let (hr, lr) = if plan.undegraded {
            (slice.clone(), slice.clone())
        } else {
            let (ph, pw) = (patch_dims(h, s), patch_dims(w, s));
            let hr = crop_top_left(slice, (ph.0, pw.0));
            let lr = degrade_to(&hr, s, (ph.1, pw.1))?;
            (hr, lr)
        };
        let sr = model.super_resolve(&lr, s)?;
        if sr.shape() != hr.shape() {
            return Err(Error::Shape(format!(
                "model `{}` returned {:?} at s={s}, expected {:?}",
                model.name(),
                sr.shape(),
                hr.shape()
            )));
        }
        if plan.metrics.psnr {
            psnrs.push(metrics::psnr(&sr, &hr, 1.0)?);
        }
        if plan.metrics.ssim {
            ssims.push(metrics::ssim(&sr, &hr)?);
        }
        for (c, (p, q)) in per_mod.iter_mut().enumerate() {
            let (a, b) = (channel(&sr, c), channel(&hr, c));
            if plan.metrics.psnr {
                p.push(metrics::psnr(&a, &b, 1.0)?);
            }
            if plan.metrics.ssim {
                q.push(metrics::ssim(&a, &b)?);
            }
        }
        if plan.metrics.fid {
            srs.push(sr);
            hrs.push(hr);
        }
    }
    let fid = match (plan.metrics.fid, embedder) {
        (true, Some(e)) => metrics::fid(&Tensor::stack(&srs), &Tensor::stack(&hrs), e)?,
        (true, None) => return Err(Error::config("eval.fid_embedder", "FID requested without an embedder")),
        (false, _) => f64::NAN,
    };
    let or_nan = |v: &[f64]| if v.is_empty() { f64::NAN } else { mean(v) };
    Ok(MetricRow {
        scale: s,
        psnr: or_nan(&psnrs),
        ssim: or_nan(&ssims),
        fid,
        per_modality: per_mod.iter().map(|(p, q)| (or_nan(p), or_nan(q))).collect(),
    })
}

/// Evaluates `model` on every slice of `volumes` at each scale of the plan.
/// Scales run in parallel; rows come back in grid order.
pub fn evaluate(
    plan: &EvalPlan,
    model: &dyn SrModel,
    volumes: &[Volume],
    embedder: Option<&dyn Embedder>,
) -> Result<MetricReport> {
    plan.validate()?;
    let first = volumes
        .first()
        .ok_or_else(|| Error::InvalidArgument("evaluation needs at least one test volume".into()))?;
    let names = first.modality_names.clone();
    if volumes.iter().any(|v| v.modality_names.len() != names.len()) {
        return Err(Error::InvalidArgument("test volumes disagree on modality count".into()));
    }
    let slices: Vec<Tensor> = volumes.iter().flat_map(|v| (0..v.n_slices()).map(|i| v.slice(i))).collect();
    if slices.is_empty() {
        return Err(Error::InvalidArgument("test volumes contain no slices".into()));
    }
    let rows = plan
        .scale_grid
        .par_iter()
        .map(|&s| eval_scale(plan, model, &slices, embedder, s))
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricReport::new(rows, if names.len() > 1 { names } else { Vec::new() });
    report.metadata = plan.metadata.clone();
    report.metadata.insert("model".into(), model.name().into());
    report
        .metadata
        .insert("scale_grid".into(), plan.scale_grid.iter().map(|s| fmt_scale(*s)).collect());
    report.metadata.insert("n_slices".into(), slices.len().into());
    if let (true, Some(e)) = (plan.metrics.fid, embedder) {
        report.metadata.insert("fid_embedder".into(), e.tag().into());
    }
    Ok(report)
}

/// Paths written by [`render_report`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub plot: PathBuf,
}

const METRICS: [&str; 3] = ["psnr", "ssim", "fid"];

fn metric(r: &MetricRow, name: &str) -> f64 {
    match name {
        "psnr" => r.psnr,
        "ssim" => r.ssim,
        _ => r.fid,
    }
}

/// Long-format plot data: one `series,metric,scale,value` line per point.
fn plot_lines(series: &[(&str, &MetricReport)]) -> String {
    let mut s = String::from("series,metric,scale,value\n");
    for (name, report) in series {
        for m in METRICS {
            for r in &report.rows {
                s.push_str(&format!("{name},{m},{},{}\n", fmt_scale(r.scale), fmt_num(metric(r, m))));
            }
        }
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `{stem}.csv`, a `{stem}.json` metadata sidecar and
/// `{stem}.plot.csv`. Content depends only on the report.
pub fn render_report(report: &MetricReport, dir: &Path, stem: &str) -> Result<ReportFiles> {
    create_dir(dir)?;
    let files = ReportFiles {
        csv: dir.join(format!("{stem}.csv")),
        sidecar: dir.join(format!("{stem}.json")),
        plot: dir.join(format!("{stem}.plot.csv")),
    };
    write_text(&files.csv, &report.to_csv())?;
    let sidecar = serde_json::json!({
        "metadata": report.metadata,
        "modality_names": report.modality_names,
        "scales": report.rows.iter().map(|r| fmt_scale(r.scale)).collect::<Vec<_>>(),
        "mean": {
            "psnr": fmt_num(report.mean.psnr),
            "ssim": fmt_num(report.mean.ssim),
            "fid": fmt_num(report.mean.fid),
        },
    });
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_text(&files.sidecar, &(text + "\n"))?;
    let name = report.metadata.get("model").and_then(|v| v.as_str()).unwrap_or("model");
    write_text(&files.plot, &plot_lines(&[(name, report)]))?;
    Ok(files)
}

/// Joins several reports on their scale axis: a wide CSV with one column
/// per `(model, metric)` (empty where a model lacks a scale) plus long-format
/// plot data with one series per model.
pub fn render_comparison(reports: &[(String, MetricReport)], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("comparison needs at least one report".into()));
    }
    create_dir(dir)?;
    let mut scales: Vec<f64> = reports.iter().flat_map(|(_, r)| r.rows.iter().map(|x| x.scale)).collect();
    scales.sort_by(f64::total_cmp);
    scales.dedup_by(|a, b| fmt_scale(*a) == fmt_scale(*b));
    let mut csv = String::from("scale");
    for (name, _) in reports {
        for m in METRICS {
            csv.push_str(&format!(",{name}_{m}"));
        }
    }
    csv.push('\n');
    let mut line = |label: String, pick: &dyn Fn(&MetricReport) -> Option<MetricRow>| {
        csv.push_str(&label);
        for (_, r) in reports {
            let row = pick(r);
            for m in METRICS {
                csv.push(',');
                if let Some(row) = &row {
                    csv.push_str(&fmt_num(metric(row, m)));
                }
            }
        }
        csv.push('\n');
    };
    for &s in &scales {
        line(fmt_scale(s), &|r| r.row(s).cloned());
    }
    line("mean".into(), &|r| Some(r.mean.clone()));
    let table = dir.join(format!("{stem}.csv"));
    let plot = dir.join(format!("{stem}.plot.csv"));
    write_text(&table, &csv)?;
    let series: Vec<(&str, &MetricReport)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    write_text(&plot, &plot_lines(&series))?;
    Ok((table, plot))
}
