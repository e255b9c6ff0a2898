//! Image I/O, dataset discovery, augmentation and seeded batch order.

use std::path::{Path, PathBuf};

use aesfa_tensor::{Float, Tensor};
use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
/// Smallest accepted training image side.
pub const MIN_TRAIN_SIDE: u32 = 16;

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    Ok(img.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::io(path, source),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}

/// `[1, 3, h, w]` with values in `[0, 1]`.
pub fn rgb_to_tensor<T: Float>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        T::from_f64_lossy(raw[p * 3 + c] as f64 / 255.0)
    })
}

/// Sample `index` of an `[n, 3, h, w]` tensor, clamped to `[0, 1]` and
/// rounded to 8 bits.
pub fn tensor_to_rgb<T: Float>(t: &Tensor<T>, index: usize) -> Result<RgbImage> {
    let [n, c, h, w] = t.dims4()?;
    if c != 3 || index >= n {
        return Err(Error::invalid(format!("cannot take image {index} of {:?}", t.shape())));
    }
    let base = index * 3 * h * w;
    let d = t.data();
    let mut raw = vec![0u8; h * w * 3];
    for p in 0..h * w {
        for ch in 0..3 {
            let v = d[base + ch * h * w + p].to_f64_lossy();
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            raw[p * 3 + ch] = (v * 255.0).round() as u8;
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized for image"))
}

/// PNG/JPEG files under `dir`, recursively, sorted by path.
pub fn discover_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(
                path,
                e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")),
            )
        })?;
        let ok = entry.file_type().is_file()
            && entry
                .path()
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ok {
            out.push(entry.into_path());
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Target length of the shorter side before cropping.
    pub resize: u32,
    /// Side of the square random crop.
    pub crop: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { resize: 512, crop: 256 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize {
            return Err(Error::Config(format!(
                "crop {} must be positive and at most the resize side {}",
                self.crop, self.resize
            )));
        }
        Ok(())
    }
}

/// Size after rescaling the shorter side to `target`, aspect preserved
/// (longer side rounded down).
pub fn rescaled_size(w: u32, h: u32, target: u32) -> (u32, u32) {
    let scale = |long: u32, short: u32| ((long as u64 * target as u64) / short as u64) as u32;
    if w <= h {
        (target, scale(h, w).max(target))
    } else {
        (scale(w, h).max(target), target)
    }
}

/// Rescale (bilinear) then take a uniformly random square crop.
pub fn augment<T: Float>(img: &RgbImage, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let (w, h) = img.dimensions();
    if w < MIN_TRAIN_SIDE || h < MIN_TRAIN_SIDE {
        return Err(Error::invalid(format!(
            "image {w}x{h} is smaller than {MIN_TRAIN_SIDE}x{MIN_TRAIN_SIDE}"
        )));
    }
    let (rw, rh) = rescaled_size(w, h, cfg.resize);
    let resized = if (rw, rh) == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, rw, rh, FilterType::Triangle)
    };
    let x0 = rng.gen_range(0..=rw - cfg.crop);
    let y0 = rng.gen_range(0..=rh - cfg.crop);
    let crop = imageops::crop_imm(&resized, x0, y0, cfg.crop, cfg.crop).to_image();
    Ok(rgb_to_tensor(&crop))
}

/// Mixes seed components into one 64-bit seed (SplitMix64 finaliser).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Independent sample streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Content = 1,
    Style = 2,
}

/// Index of the file at global draw `position` of `stream`: every epoch is a
/// fresh seeded permutation.
pub fn stream_index(len: usize, seed: u64, stream: Stream, position: u64) -> usize {
    let epoch = position / len as u64;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[
        seed,
        stream as u64,
        epoch,
    ])));
    order[(position % len as u64) as usize]
}

/// Sorted content and style file lists.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub content: Vec<PathBuf>,
    pub style: Vec<PathBuf>,
}

impl Dataset {
    pub fn discover(content_dir: &Path, style_dir: &Path) -> Result<Self> {
        let content = discover_images(content_dir)?;
        let style = discover_images(style_dir)?;
        for (files, dir) in [(&content, content_dir), (&style, style_dir)] {
            if files.is_empty() {
                return Err(Error::Config(format!("no PNG/JPEG images under {}", dir.display())));
            }
        }
        Ok(Dataset { content, style })
    }

    /// Content and style batches for 0-based step `step`. Depends only on
    /// the arguments, so any step can be regenerated in isolation.
    pub fn batch<T: Float>(
        &self,
        step: u64,
        batch: usize,
        seed: u64,
        aug: &AugmentConfig,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let draw = |files: &[PathBuf], stream: Stream| -> Result<Tensor<T>> {
            let items = (0..batch)
                .into_par_iter()
                .map(|b| {
                    let pos = step * batch as u64 + b as u64;
                    let path = &files[stream_index(files.len(), seed, stream, pos)];
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, stream as u64, pos, 0xa06]));
                    let img = load_rgb(path)?;
                    augment(&img, aug, &mut rng).map_err(|e| match e {
                        Error::InvalidArgument(m) => Error::Image {
                            path: path.clone(),
                            message: m,
                        },
                        other => other,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Tensor::stack_batch(&items)?)
        };
        Ok((draw(&self.content, Stream::Content)?, draw(&self.style, Stream::Style)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_examples() {
        assert_eq!(rescaled_size(800, 600, 512), (682, 512));
        assert_eq!(rescaled_size(512, 512, 512), (512, 512));
        assert_eq!(rescaled_size(128, 128, 512), (512, 512));
        assert_eq!(rescaled_size(600, 800, 512), (512, 682));
    }

    #[test]
    fn augment_output_shape() {
        let img = RgbImage::from_fn(80, 60, |x, y| image::Rgb([x as u8, y as u8, 7]));
        let cfg = AugmentConfig { resize: 64, crop: 32 };
        let t: Tensor<f32> = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.shape(), &[1, 3, 32, 32]);
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let tiny = RgbImage::new(8, 40);
        assert!(augment::<f32>(&tiny, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn epochs_are_permutations() {
        let n = 7;
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..n as u64)
                .map(|p| stream_index(n, 5, Stream::Style, epoch * n as u64 + p))
                .collect();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pixel_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 * 40, y as u8 * 90, 255]));
        let t: Tensor<f32> = rgb_to_tensor(&img);
        assert_eq!(tensor_to_rgb(&t, 0).unwrap(), img);
    }
}
