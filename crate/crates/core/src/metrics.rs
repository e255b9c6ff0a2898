//! SSIM, paired evaluation and inference timing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aesfa_tensor::{Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_rgb, rgb_to_tensor};
use crate::encoders::{MIN_STYLE_SIDE, SIZE_MULTIPLE};
use crate::error::{Error, Result};
use crate::extractor::PerceptualExtractor;
use crate::inference::{crop, stylize_any};
use crate::losses::style_loss;
use crate::model::StyleModel;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Luma plane of an `[1, 3, h, w]` image.
pub fn luma<T: Float>(img: &Tensor<T>) -> Result<(Vec<f64>, usize, usize)> {
    let [n, c, h, w] = img.dims4()?;
    if n != 1 || c != 3 {
        return Err(Error::invalid(format!("expected one RGB image, got {:?}", img.shape())));
    }
    let d = img.data();
    let hw = h * w;
    Ok((
        (0..hw)
            .map(|p| (0..3).map(|ch| LUMA[ch] * d[ch * hw + p].to_f64_lossy()).sum())
            .collect(),
        h,
        w,
    ))
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = taps.iter().enumerate().map(|(t, &g)| g * x[y * w + ox + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = taps
                .iter()
                .enumerate()
                .map(|(t, &g)| g * rows[(oy + t) * ow + ox])
                .sum();
        }
    }
    out
}

/// Mean structural similarity of the luma planes, 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, valid windows only.
pub fn ssim<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "ssim: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let (x, h, w) = luma(a)?;
    let (y, _, _) = luma(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &taps);
    let my = filter_valid(&y, h, w, &taps);
    let sxx = filter_valid(&prod(&x, &x), h, w, &taps);
    let syy = filter_valid(&prod(&y, &y), h, w, &taps);
    let sxy = filter_valid(&prod(&x, &y), h, w, &taps);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Wall-clock statistics over timed repetitions, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub reps: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Some(TimingStats {
            reps: samples.len(),
            mean,
            std: var.sqrt(),
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub content: String,
    pub style: String,
    pub ssim: Option<f64>,
    pub style_loss: Option<f64>,
    pub seconds: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub failures: usize,
    pub mean_ssim: Option<f64>,
    pub mean_style_loss: Option<f64>,
    pub timing: Option<TimingStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub summary: EvalSummary,
}

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>) -> Self {
        let ok: Vec<&EvalRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let mean = |f: &dyn Fn(&EvalRecord) -> Option<f64>| {
            let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let times: Vec<f64> = ok.iter().filter_map(|r| r.seconds).collect();
        let summary = EvalSummary {
            pairs: records.len(),
            failures: records.len() - ok.len(),
            mean_ssim: mean(&|r| r.ssim),
            mean_style_loss: mean(&|r| r.style_loss),
            timing: TimingStats::from_samples(&times),
        };
        EvalReport { records, summary }
    }

    /// One JSON line per record, then a final `{"summary": ...}` line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("record serialises");
            out.push(b'\n');
        }
        serde_json::to_writer(&mut out, &serde_json::json!({ "summary": self.summary })).expect("summary serialises");
        out.push(b'\n');
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

/// Largest top-left window with sides divisible by 8, as the extractor
/// requires.
fn extractor_view<T: Float>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = t.dims4()?;
    if h < 8 || w < 8 {
        return Err(Error::invalid(format!(
            "{h}x{w} is too small for the perceptual extractor"
        )));
    }
    crop(t, h / 8 * 8, w / 8 * 8)
}

/// Evaluates every (content, style) pair with a caller-supplied stylizer.
/// Failing pairs are recorded with their error and excluded from the means.
pub fn eval_pairs_with<T: Float>(
    contents: &[PathBuf],
    styles: &[PathBuf],
    ext: &PerceptualExtractor<T>,
    mut stylize: impl FnMut(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
) -> Result<EvalReport> {
    if contents.is_empty() || styles.is_empty() {
        return Err(Error::Config(
            "evaluation needs at least one content and one style image".into(),
        ));
    }
    let decode = |p: &Path| load_rgb(p).map(|img| rgb_to_tensor::<T>(&img));
    let style_images: Vec<_> = styles.iter().map(|p| decode(p)).collect();
    let mut records = Vec::new();
    for cp in contents {
        let content = decode(cp);
        for (sp, style) in styles.iter().zip(&style_images) {
            let mut rec = EvalRecord {
                content: cp.display().to_string(),
                style: sp.display().to_string(),
                ssim: None,
                style_loss: None,
                seconds: None,
                error: None,
            };
            let mut run = || -> Result<(f64, f64, f64)> {
                let c = content.as_ref().map_err(clone_err)?;
                let s = style.as_ref().map_err(clone_err)?;
                let t0 = Instant::now();
                let out = stylize(c, s)?;
                let secs = t0.elapsed().as_secs_f64();
                let q = ssim(&out, c)?;
                let sl = style_loss(&extractor_view(&out)?, &extractor_view(s)?, ext)?;
                Ok((q, sl, secs))
            };
            match run() {
                Ok((q, sl, secs)) => {
                    rec.ssim = Some(q);
                    rec.style_loss = Some(sl);
                    rec.seconds = Some(secs);
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            records.push(rec);
        }
    }
    Ok(EvalReport::from_records(records))
}

fn clone_err(e: &Error) -> Error {
    Error::Config(e.to_string())
}

/// Stylizes every pair with `model` and records SSIM against the content
/// and the perceptual style loss against the style.
pub fn eval_pairs<T: Float>(
    model: &StyleModel<T>,
    contents: &[PathBuf],
    styles: &[PathBuf],
    ext: &PerceptualExtractor<T>,
) -> Result<EvalReport> {
    eval_pairs_with(contents, styles, ext, |c, s| stylize_any(model, c, s))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub size: usize,
    pub warmup: usize,
    pub forward_passes: usize,
    pub timing: TimingStats,
}

/// Runs `warmup` untimed then `reps` timed calls of `forward`.
pub fn bench_with(reps: usize, warmup: usize, mut forward: impl FnMut() -> Result<()>) -> Result<(TimingStats, usize)> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let mut calls = 0;
    for _ in 0..warmup {
        forward()?;
        calls += 1;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        forward()?;
        samples.push(t0.elapsed().as_secs_f64());
        calls += 1;
    }
    Ok((TimingStats::from_samples(&samples).expect("reps > 0"), calls))
}

/// Times stylization of a seeded random `size x size` content with a style
/// of the same size (at least the encoder minimum). Forward pass only.
pub fn bench_inference<T: Float>(
    model: &StyleModel<T>,
    size: usize,
    reps: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if size == 0 || !size.is_multiple_of(SIZE_MULTIPLE) {
        return Err(Error::invalid(format!(
            "size {size} must be a positive multiple of {SIZE_MULTIPLE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe4c);
    let mut random = |side: usize| Tensor::from_fn(&[1, 3, side, side], |_| T::from_f64_lossy(rng.gen::<f64>()));
    let content = random(size);
    let style = random(size.max(MIN_STYLE_SIDE).div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE);
    let (timing, forward_passes) = bench_with(reps, warmup, || model.stylize(&content, &style).map(|_| ()))?;
    Ok(BenchReport {
        size,
        warmup,
        forward_passes,
        timing,
    })
}
