//! Seeded synthetic images and datasets.

use std::path::Path;

use aesfa_tensor::Tensor;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth, low-frequency "photo-like" content image.
pub fn content_image(seed: u64, w: u32, h: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(4.0..w as f64 / 3.0),
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect();
    RgbImage::from_fn(w, h, |x, y| {
        let mut c = base;
        for (bx, by, r, col) in &blobs {
            let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
            let a = (-d2 / (2.0 * r * r)).exp();
            for k in 0..3 {
                c[k] = c[k] * (1.0 - a) + col[k] * a;
            }
        }
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// High-contrast periodic texture with a seeded palette and frequency.
pub fn style_image(seed: u64, w: u32, h: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5757);
    let a: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let b: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let period = rng.gen_range(3.0..12.0);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let noise = rng.gen_range(0.0..0.3);
    RgbImage::from_fn(w, h, |x, y| {
        let t = (x as f64 * angle.cos() + y as f64 * angle.sin()) / period;
        let s = 0.5 + 0.5 * (t * std::f64::consts::TAU).sin();
        let n: f64 = rng.gen_range(-noise..=noise);
        let c: [f64; 3] = std::array::from_fn(|k| a[k] * s + b[k] * (1.0 - s) + n);
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Writes `n` content and `n` style PNGs of `side x side` under `root`.
pub fn write_dataset(root: &Path, n: usize, side: u32) -> (std::path::PathBuf, std::path::PathBuf) {
    let content = root.join("content");
    let style = root.join("style");
    std::fs::create_dir_all(content.join("nested")).unwrap();
    std::fs::create_dir_all(&style).unwrap();
    for i in 0..n {
        let dir = if i % 3 == 2 {
            content.join("nested")
        } else {
            content.clone()
        };
        content_image(i as u64, side, side)
            .save(dir.join(format!("c{i:02}.png")))
            .unwrap();
        style_image(i as u64, side, side)
            .save(style.join(format!("s{i:02}.png")))
            .unwrap();
    }
    (content, style)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}
