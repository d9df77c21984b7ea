//! PSNR, SSIM and the Fréchet distance between embedded image sets.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::archive;
use crate::autograd::{Backend, Bound, Eager};
use crate::error::{Error, Result};
use crate::nn::{self, InitScheme, ParamStore};
use crate::tensor::{ConvGeom, Tensor};

mod inception;

pub use inception::InceptionV3;

/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
/// Standard deviation of the SSIM window.
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Eigenvalues below `−PSD_TOL · max(1, ‖Σ‖)` mean a covariance is not PSD.
pub const PSD_TOL: f64 = 1e-8;

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Neumaier-compensated sum; keeps the MSE of a uniform error exact.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in values {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// `10·log10(L² / MSE)`; `+∞` when the images are identical.
pub fn psnr(sr: &Tensor, hr: &Tensor, peak: f64) -> Result<f64> {
    check_same(sr, hr)?;
    let n = sr.numel() as f64;
    let mse = compensated_sum(sr.data().iter().zip(hr.data()).map(|(a, b)| (a - b) * (a - b))) / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut t = [0.0; SSIM_WINDOW];
    for (i, v) in t.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let z: f64 = t.iter().sum();
    t.map(|v| v / z)
}

/// Separable "valid" filtering of one `h×w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            tmp[y * wo + x] = (0..n).map(|t| k[t] * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|t| k[t] * tmp[(y + t) * wo + x]).sum();
        }
    }
    out
}

fn planes(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [h, w] => Ok((1, *h, *w)),
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::Shape(format!("expected [h, w] or [c, h, w], got {other:?}"))),
    }
}

/// Mean local SSIM over every full window position, averaged over channels.
/// Inputs are `[h, w]` or `[c, h, w]` with values in `[0, 1]`.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    check_same(x, y)?;
    let (c, h, w) = planes(x)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let k = ssim_taps();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let plane = h * w;
    let mut total = 0.0;
    for ci in 0..c {
        let a = &x.data()[ci * plane..(ci + 1) * plane];
        let b = &y.data()[ci * plane..(ci + 1) * plane];
        let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(p, q)| f(*p, *q)).collect::<Vec<_>>();
        let mx = filter_valid(a, h, w, &k);
        let my = filter_valid(b, h, w, &k);
        let sxx = filter_valid(&prod(|p, _| p * p), h, w, &k);
        let syy = filter_valid(&prod(|_, q| q * q), h, w, &k);
        let sxy = filter_valid(&prod(|p, q| p * q), h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// Maps images `[n, m, h, w]` to one vector per image. Implementations must
/// not couple samples.
pub trait Embedder: Send + Sync {
    fn tag(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, images: &Tensor) -> Result<Vec<Vec<f64>>>;
}

/// Seeded random conv stack (1→16 stride 1, 16→32 stride 2) followed by
/// global average pooling. Multi-channel images are embedded per channel and
/// the vectors concatenated.
#[derive(Clone, Debug)]
pub struct SeededConvEmbedder {
    params: ParamStore,
}

impl SeededConvEmbedder {
    pub const TAG: &'static str = "seeded-small-conv";
    const WIDTH: usize = 32;

    pub fn new(seed: u64) -> Self {
        let mut params = ParamStore::new();
        nn::init_layer(&mut params, "conv1", &[16, 1, 3, 3], InitScheme::KaimingUniform, seed);
        nn::init_layer(&mut params, "conv2", &[Self::WIDTH, 16, 3, 3], InitScheme::KaimingUniform, seed);
        Self { params }
    }

    fn forward(&self, x: Arc<Tensor>) -> Result<Arc<Tensor>> {
        let b = Eager;
        let p: Bound<Arc<Tensor>> = b.bind(&self.params);
        let y = b.conv2d(&x, &p.get("conv1.weight")?, ConvGeom::same(3));
        let y = b.leaky_relu(&b.add_bias(&y, &p.get("conv1.bias")?), nn::LEAKY_SLOPE);
        let y = b.conv2d(&y, &p.get("conv2.weight")?, ConvGeom::new(2, 1));
        let y = b.leaky_relu(&b.add_bias(&y, &p.get("conv2.bias")?), nn::LEAKY_SLOPE);
        Ok(b.global_avg_pool(&y))
    }
}

impl Embedder for SeededConvEmbedder {
    fn tag(&self) -> &str {
        Self::TAG
    }

    fn dim(&self) -> usize {
        Self::WIDTH
    }

    fn embed(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (n, m, h, w) = dims4(images)?;
        let mut out = vec![Vec::with_capacity(m * Self::WIDTH); n];
        for c in 0..m {
            let x = Tensor::from_fn(&[n, 1, h, w], |i| {
                let (s, r) = (i / (h * w), i % (h * w));
                images.data()[(s * m + c) * h * w + r]
            });
            let f = self.forward(Arc::new(x))?;
            for (s, v) in out.iter_mut().enumerate() {
                v.extend_from_slice(&f.data()[s * Self::WIDTH..(s + 1) * Self::WIDTH]);
            }
        }
        Ok(out)
    }
}

fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, m, h, w] => Ok((*n, *m, *h, *w)),
        other => Err(Error::Shape(format!("expected [n, m, h, w], got {other:?}"))),
    }
}

/// Builds the embedder named by `tag`; the Inception network needs weights.
pub fn embedder_for(tag: &str, seed: u64, weights: Option<&Path>) -> Result<Box<dyn Embedder>> {
    match tag {
        SeededConvEmbedder::TAG => Ok(Box::new(SeededConvEmbedder::new(seed))),
        InceptionV3::TAG => {
            let path = weights.ok_or_else(|| Error::config("eval.fid_weights", "required for inception-v3-pool3"))?;
            let (params, _) = archive::load(path)?;
            Ok(Box::new(InceptionV3::from_params(params)?))
        }
        other => Err(Error::config("eval.fid_embedder", format!("unknown embedder `{other}`"))),
    }
}

/// Mean and covariance of a set of embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub count: usize,
}

impl EmbeddingStats {
    /// Unbiased (`n − 1`) covariance; a single vector gives zero covariance.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let n = vectors.len();
        let d = vectors.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("empty embedding set".into()))?;
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::Shape("embeddings differ in length".into()));
        }
        let mut mu = DVector::zeros(d);
        for v in vectors {
            mu += DVector::from_column_slice(v);
        }
        mu /= n as f64;
        let mut sigma = DMatrix::zeros(d, d);
        for v in vectors {
            let c = DVector::from_column_slice(v) - &mu;
            sigma += &c * c.transpose();
        }
        if n > 1 {
            sigma /= (n - 1) as f64;
        }
        Ok(Self { mu, sigma, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let scale = e.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(v) = e.eigenvalues.iter().find(|&&v| v < -PSD_TOL * scale) {
        return Err(Error::Numerical(format!("{what} is not positive semi-definite (eigenvalue {v:e})")));
    }
    Ok(e)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let e = psd_eigen(m, what)?;
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&e.eigenvectors * d * e.eigenvectors.transpose())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa·Σb)^½)`. The trace of the square root is
/// taken as `Tr((√Σa Σb √Σa)^½)`, which is equal and symmetric.
pub fn frechet_distance(a: &EmbeddingStats, b: &EmbeddingStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("embedding dims {} and {} differ", a.dim(), b.dim())));
    }
    let diff = (&a.mu - &b.mu).norm_squared();
    let ra = psd_sqrt(&a.sigma, "first covariance")?;
    psd_eigen(&b.sigma, "second covariance")?;
    let inner = &ra * &b.sigma * &ra;
    let e = psd_eigen(&inner, "covariance product")?;
    let tr_sqrt: f64 = e.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = diff + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

/// Fréchet distance between the embeddings of two image sets `[n, m, h, w]`.
pub fn fid(sr_set: &Tensor, hr_set: &Tensor, embedder: &dyn Embedder) -> Result<f64> {
    let a = embedder.embed(sr_set)?;
    let b = embedder.embed(hr_set)?;
    let dim = a.first().map_or(0, Vec::len);
    if a.len() <= dim || b.len() <= dim {
        log::warn!(
            "FID on {} and {} images with {dim}-dim embeddings: covariances are rank-deficient",
            a.len(),
            b.len()
        );
    }
    frechet_distance(&EmbeddingStats::from_vectors(&a)?, &EmbeddingStats::from_vectors(&b)?)
}

/// One row of a [`MetricReport`]. Unavailable metrics are NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scale: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub fid: f64,
    /// Per-modality `(psnr, ssim)` when images have several channels.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_modality: Vec<(f64, f64)>,
}

/// Per-scale metrics plus their arithmetic mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
    pub metadata: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub modality_names: Vec<String>,
}

fn mean_of(vals: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = vals.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

impl MetricReport {
    /// Builds the report and its mean row.
    pub fn new(rows: Vec<MetricRow>, modality_names: Vec<String>) -> Self {
        let k = rows.first().map_or(0, |r| r.per_modality.len());
        let mean = MetricRow {
            scale: f64::NAN,
            psnr: mean_of(rows.iter().map(|r| r.psnr)),
            ssim: mean_of(rows.iter().map(|r| r.ssim)),
            fid: mean_of(rows.iter().map(|r| r.fid)),
            per_modality: (0..k)
                .map(|c| {
                    (
                        mean_of(rows.iter().map(|r| r.per_modality[c].0)),
                        mean_of(rows.iter().map(|r| r.per_modality[c].1)),
                    )
                })
                .collect(),
        };
        Self {
            rows,
            mean,
            metadata: BTreeMap::new(),
            modality_names,
        }
    }

    pub fn row(&self, scale: f64) -> Option<&MetricRow> {
        self.rows.iter().find(|r| (r.scale - scale).abs() < 1e-9)
    }

    /// CSV with `scale,psnr,ssim,fid`, per-modality columns when present,
    /// and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scale,psnr,ssim,fid");
        for name in &self.modality_names {
            s.push_str(&format!(",psnr_{name},ssim_{name}"));
        }
        s.push('\n');
        let line = |label: String, r: &MetricRow| {
            let mut l = format!("{label},{},{},{}", fmt_num(r.psnr), fmt_num(r.ssim), fmt_num(r.fid));
            for (p, q) in &r.per_modality {
                l.push_str(&format!(",{},{}", fmt_num(*p), fmt_num(*q)));
            }
            l.push('\n');
            l
        };
        for r in &self.rows {
            s.push_str(&line(fmt_scale(r.scale), r));
        }
        s.push_str(&line("mean".into(), &self.mean));
        s
    }

    /// Parses the CSV written by [`MetricReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Decode {
            path: "<report csv>".into(),
            reason: m,
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty report".into()))?.split(',').collect();
        if header.len() < 4 || header[..4] != ["scale", "psnr", "ssim", "fid"] {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let modality_names: Vec<String> = header[4..]
            .iter()
            .filter_map(|h| h.strip_prefix("psnr_").map(str::to_string))
            .collect();
        let mut rows = Vec::new();
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != header.len() {
                return Err(bad(format!("row `{l}` has {} fields", f.len())));
            }
            if f[0] == "mean" {
                continue;
            }
            let num = |s: &str| parse_num(s).ok_or_else(|| bad(format!("bad number `{s}`")));
            let per_modality = (0..modality_names.len())
                .map(|c| Ok((num(f[4 + 2 * c])?, num(f[5 + 2 * c])?)))
                .collect::<Result<_>>()?;
            rows.push(MetricRow {
                scale: num(f[0])?,
                psnr: num(f[1])?,
                ssim: num(f[2])?,
                fid: num(f[3])?,
                per_modality,
            });
        }
        Ok(Self::new(rows, modality_names))
    }
}

pub(crate) fn fmt_scale(s: f64) -> String {
    let r = (s * 1000.0).round() / 1000.0;
    format!("{r}")
}

/// Numbers for report files: `inf`, `nan` or shortest round-trip decimal.
pub(crate) fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_num(s: &str) -> Option<f64> {
    match s.trim() {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}
