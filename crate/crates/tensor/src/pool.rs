//! Resolution changes: 2x2 average/max pooling, nearest 2x upsampling and
//! adaptive average pooling.

use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::scalar::Float;
use crate::tensor::Tensor;

fn planes<T: Float>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [n, c, h, w] = x.dims4()?;
    Ok((n * c, h, w))
}

pub fn avg_pool2<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::invalid(
            "pool2",
            format!("spatial dims {h}x{w} must be even"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let quarter = T::from_f64_lossy(0.25);
    let src = x.data();
    if ho * wo > 0 {
        out.data_mut().par_chunks_mut(ho * wo).enumerate().for_each(|(p, o)| {
            let s = &src[p * h * w..(p + 1) * h * w];
            for y in 0..ho {
                for xx in 0..wo {
                    let i = 2 * y * w + 2 * xx;
                    o[y * wo + xx] = (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]) * quarter;
                }
            }
        });
    }
    Ok(out)
}

pub fn avg_pool2_backward<T: Float>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(in_shape);
    let quarter = T::from_f64_lossy(0.25);
    let g = dy.data();
    if h * w > 0 {
        dx.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(p, d)| {
            let gp = &g[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..h {
                for xx in 0..w {
                    d[y * w + xx] = gp[(y / 2) * wo + xx / 2] * quarter;
                }
            }
        });
    }
    dx
}

pub fn upsample2<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let src = x.data();
    if ho * wo > 0 {
        out.data_mut().par_chunks_mut(ho * wo).enumerate().for_each(|(p, o)| {
            let s = &src[p * h * w..(p + 1) * h * w];
            for y in 0..ho {
                for xx in 0..wo {
                    o[y * wo + xx] = s[(y / 2) * w + xx / 2];
                }
            }
        });
    }
    Ok(out)
}

pub fn upsample2_backward<T: Float>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let wo = 2 * w;
    let mut dx = Tensor::zeros(in_shape);
    let g = dy.data();
    if h * w > 0 {
        dx.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(p, d)| {
            let gp = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let i = 2 * y * wo + 2 * xx;
                    d[y * w + xx] = gp[i] + gp[i + 1] + gp[i + wo] + gp[i + wo + 1];
                }
            }
        });
    }
    dx
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
/// Returns the output and, per output cell, the flat in-plane index of the
/// winning input (first maximum in row-major order).
pub fn max_pool2<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = x.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let src = x.data();
    if ho * wo > 0 {
        out.data_mut()
            .par_chunks_mut(ho * wo)
            .zip(arg.par_chunks_mut(ho * wo))
            .enumerate()
            .for_each(|(p, (o, a))| {
                let s = &src[p * h * w..(p + 1) * h * w];
                for y in 0..ho {
                    for xx in 0..wo {
                        let base = 2 * y * w + 2 * xx;
                        let mut best = base;
                        for cand in [base + 1, base + w, base + w + 1] {
                            if s[cand] > s[best] {
                                best = cand;
                            }
                        }
                        o[y * wo + xx] = s[best];
                        a[y * wo + xx] = best as u32;
                    }
                }
            });
    }
    Ok((out, arg))
}

pub fn max_pool2_backward<T: Float>(dy: &Tensor<T>, arg: &[u32], in_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let per_out = dy.shape()[2] * dy.shape()[3];
    let mut dx = Tensor::zeros(in_shape);
    let g = dy.data();
    if h * w > 0 && per_out > 0 {
        dx.data_mut().par_chunks_mut(h * w).enumerate().for_each(|(p, d)| {
            for j in 0..per_out {
                d[arg[p * per_out + j] as usize] += g[p * per_out + j];
            }
        });
    }
    dx
}

fn bins(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| ((i * len) / out, ((i + 1) * len).div_ceil(out)))
        .collect()
}

/// Adaptive average pooling to `oh x ow`; bin `i` covers
/// `[floor(i*H/oh), ceil((i+1)*H/oh))`.
pub fn adaptive_avg_pool<T: Float>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(TensorError::invalid("adaptive_avg_pool", "empty spatial extent"));
    }
    let (by, bx) = (bins(h, oh), bins(w, ow));
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let src = x.data();
    let (pn, _, _) = planes(x)?;
    for p in 0..pn {
        let s = &src[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1)) in by.iter().enumerate() {
            for (ox, &(x0, x1)) in bx.iter().enumerate() {
                let mut acc = T::zero();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += s[y * w + xx];
                    }
                }
                let count = T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                out.data_mut()[(p * oh + oy) * ow + ox] = acc / count;
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool_backward<T: Float>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
    let (by, bx) = (bins(h, oh), bins(w, ow));
    let mut dx = Tensor::zeros(in_shape);
    let pn = in_shape[0] * in_shape[1];
    let g = dy.data();
    for p in 0..pn {
        let d = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1)) in by.iter().enumerate() {
            for (ox, &(x0, x1)) in bx.iter().enumerate() {
                let count = T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                let v = g[(p * oh + oy) * ow + ox] / count;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        d[y * w + xx] += v;
                    }
                }
            }
        }
    }
    dx
}
