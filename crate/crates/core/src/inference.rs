//! Stylization of arbitrarily sized images.
//!
//! The encoders need sides divisible by 16 (and style sides of at least
//! 48), so inputs are reflect-padded at the bottom and right edges and the
//! result is cropped back to the content's size.

use aesfa_tensor::{Float, Tensor};

use crate::encoders::{MIN_STYLE_SIDE, SIZE_MULTIPLE};
use crate::error::{Error, Result};
use crate::model::StyleModel;

/// Mirror index into `0..n` (edge sample not repeated), valid for any `i`.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Smallest multiple of `m` that is `>= max(x, min)`.
pub fn padded_side(x: usize, m: usize, min: usize) -> usize {
    x.max(min).div_ceil(m) * m
}

/// Pads every sample of `[n, c, h, w]` to `[n, c, ph, pw]` by reflection.
pub fn reflect_pad<T: Float>(t: &Tensor<T>, ph: usize, pw: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = t.dims4()?;
    if ph < h || pw < w || h == 0 || w == 0 {
        return Err(Error::invalid(format!("cannot pad {h}x{w} to {ph}x{pw}")));
    }
    if (ph, pw) == (h, w) {
        return Ok(t.clone());
    }
    let src = t.data();
    Ok(Tensor::from_fn(&[n, c, ph, pw], |i| {
        let (plane, p) = (i / (ph * pw), i % (ph * pw));
        let (y, x) = (reflect_index(p / pw, h), reflect_index(p % pw, w));
        src[plane * h * w + y * w + x]
    }))
}

/// Top-left `h x w` window of every sample.
pub fn crop<T: Float>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [n, c, th, tw] = t.dims4()?;
    if h > th || w > tw {
        return Err(Error::invalid(format!("cannot crop {th}x{tw} to {h}x{w}")));
    }
    if (h, w) == (th, tw) {
        return Ok(t.clone());
    }
    let src = t.data();
    Ok(Tensor::from_fn(&[n, c, h, w], |i| {
        let (plane, p) = (i / (h * w), i % (h * w));
        src[plane * th * tw + (p / w) * tw + p % w]
    }))
}

fn pad_content<T: Float>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = t.dims4()?;
    reflect_pad(t, padded_side(h, SIZE_MULTIPLE, 0), padded_side(w, SIZE_MULTIPLE, 0))
}

fn pad_style<T: Float>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = t.dims4()?;
    reflect_pad(
        t,
        padded_side(h, SIZE_MULTIPLE, MIN_STYLE_SIDE),
        padded_side(w, SIZE_MULTIPLE, MIN_STYLE_SIDE),
    )
}

/// Stylizes `content` (`[1, 3, h, w]`, any size) with `style`; the output
/// has the content's size.
pub fn stylize_any<T: Float>(model: &StyleModel<T>, content: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = content.dims4()?;
    let out = model.stylize(&pad_content(content)?, &pad_style(style)?)?;
    crop(&out, h, w)
}

/// Blends the high-frequency style code of `style_high` with the
/// low-frequency code of `style_low`.
pub fn stylize_blend_any<T: Float>(
    model: &StyleModel<T>,
    content: &Tensor<T>,
    style_high: &Tensor<T>,
    style_low: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [_, _, h, w] = content.dims4()?;
    let out = model.stylize_blend(&pad_content(content)?, &pad_style(style_high)?, &pad_style(style_low)?)?;
    crop(&out, h, w)
}
