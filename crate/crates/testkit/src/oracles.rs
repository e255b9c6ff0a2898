//! Direct loop-nest references.

use aesfa_tensor::Tensor;

/// Zero-padded grouped convolution, seven nested loops.
pub fn conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cg, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(cg * groups, cin);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let og = cout / groups;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    for s in 0..n {
        for o in 0..cout {
            let grp = o / og;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for ci in 0..cg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.at4(s, grp * cg + ci, iy as usize, ix as usize);
                                acc += xv * w.data()[((o * cg + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.data_mut()[((s * cout + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// 2x2 block mean.
pub fn pool2(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (h, w) = (s[2] / 2, s[3] / 2);
    Tensor::from_fn(&[s[0], s[1], h, w], |i| {
        let (nc, p) = (i / (h * w), i % (h * w));
        let (y, xx) = (p / w, p % w);
        let (n, c) = (nc / s[1], nc % s[1]);
        (x.at4(n, c, 2 * y, 2 * xx)
            + x.at4(n, c, 2 * y + 1, 2 * xx)
            + x.at4(n, c, 2 * y, 2 * xx + 1)
            + x.at4(n, c, 2 * y + 1, 2 * xx + 1))
            / 4.0
    })
}

/// Nearest-neighbour x2.
pub fn upsample2(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (h, w) = (s[2] * 2, s[3] * 2);
    Tensor::from_fn(&[s[0], s[1], h, w], |i| {
        let (nc, p) = (i / (h * w), i % (h * w));
        x.at4(nc / s[1], nc % s[1], (p / w) / 2, (p % w) / 2)
    })
}

pub fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i])
}

/// Expands a grouped weight `[C_out, C_in/g, k, k]` into the equivalent
/// dense block-diagonal `[C_out, C_in, k, k]`.
pub fn block_diagonal(w: &Tensor<f64>, groups: usize) -> Tensor<f64> {
    let (cout, cg, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let cin = cg * groups;
    let og = cout / groups;
    Tensor::from_fn(&[cout, cin, k, k], |i| {
        let kk = i % (k * k);
        let ci = (i / (k * k)) % cin;
        let o = i / (k * k * cin);
        if ci / cg == o / og {
            w.data()[(o * cg + ci % cg) * k * k + kk]
        } else {
            0.0
        }
    })
}

/// Rank of every entry (ties by index), by counting.
pub fn ranks(x: &[f64]) -> Vec<usize> {
    (0..x.len())
        .map(|i| (0..x.len()).filter(|&j| x[j] < x[i] || (x[j] == x[i] && j < i)).count())
        .collect()
}

/// Sort-and-scatter matching: the r-th smallest of `y` goes to the position
/// holding the r-th smallest of `x`.
pub fn efdm(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut ys = y.to_vec();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ranks(x).into_iter().map(|r| ys[r]).collect()
}

/// `‖f − EFDM(f, g)‖₂` per channel of sample `i` of `f` against sample `j`
/// of `g` (equal spatial sizes).
pub fn matched_norm(f: &Tensor<f64>, i: usize, g: &Tensor<f64>, j: usize) -> f64 {
    let (c, hw) = (f.shape()[1], f.shape()[2] * f.shape()[3]);
    assert_eq!(g.shape()[2] * g.shape()[3], hw);
    let mut sq = 0.0;
    for ch in 0..c {
        let fs = &f.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw];
        let gs = &g.data()[(j * c + ch) * hw..(j * c + ch + 1) * hw];
        for (a, b) in fs.iter().zip(efdm(fs, gs)) {
            sq += (a - b).powi(2);
        }
    }
    sq.sqrt()
}

/// SSIM by explicit 11x11 window sums over the luma plane.
#[allow(clippy::needless_range_loop)]
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (h, w) = (a.shape()[2], a.shape()[3]);
    let luma = |t: &Tensor<f64>, y: usize, x: usize| {
        0.299 * t.at4(0, 0, y, x) + 0.587 * t.at4(0, 1, y, x) + 0.114 * t.at4(0, 2, y, x)
    };
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (dy, row) in win.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let r2 = (dy as f64 - 5.0).powi(2) + (dx as f64 - 5.0).powi(2);
            *v = (-r2 / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let g = win[dy][dx] / total;
                    mx += g * luma(a, y0 + dy, x0 + dx);
                    my += g * luma(b, y0 + dy, x0 + dx);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let g = win[dy][dx] / total;
                    let p = luma(a, y0 + dy, x0 + dx) - mx;
                    let q = luma(b, y0 + dy, x0 + dx) - my;
                    vx += g * p * p;
                    vy += g * q * q;
                    cxy += g * p * q;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Largest relative deviation `max|a - b| / max(max|b|, floor)`.
pub fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    let scale = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.max_abs_diff(b) / scale
}

/// Output spatial size of a convolution.
pub fn out_dim(d: usize, k: usize, stride: usize, pad: usize) -> usize {
    (d + 2 * pad - k) / stride + 1
}

/// Octave convolution composed term by term:
/// `Y_H = conv(X_H, W_HH) + conv(up(X_L), W_LH) + b_H`,
/// `Y_L = conv(X_L, W_LL) + conv(pool(X_H), W_HL) + b_L`.
/// Depthwise layers use one group per channel and have no cross paths.
#[allow(clippy::too_many_arguments)]
pub fn octconv(
    xh: &Tensor<f64>,
    xl: &Tensor<f64>,
    w: [Option<&Tensor<f64>>; 4],
    b_high: Option<&Tensor<f64>>,
    b_low: Option<&Tensor<f64>>,
    out_channels: (usize, usize),
    stride: usize,
    pad: usize,
    depthwise: bool,
) -> (Tensor<f64>, Tensor<f64>) {
    let [w_hh, w_hl, w_lh, w_ll] = w;
    let k = w.iter().flatten().map(|t| t.shape()[2]).next().unwrap_or(1);
    let n = xh.shape()[0];
    let (h, wd) = (xh.shape()[2], xh.shape()[3]);
    let groups = |t: &Tensor<f64>| if depthwise { t.shape()[0] } else { 1 };
    let branch = |terms: Vec<Tensor<f64>>, c: usize, bias: Option<&Tensor<f64>>, hh: usize, ww: usize| {
        let shape = [n, c, out_dim(hh, k, stride, pad), out_dim(ww, k, stride, pad)];
        let mut acc = Tensor::zeros(&shape);
        for t in terms {
            acc = add(&acc, &t);
        }
        if let Some(b) = bias {
            let plane = shape[2] * shape[3];
            for (i, v) in acc.data_mut().iter_mut().enumerate() {
                *v += b.data()[(i / plane) % c];
            }
        }
        acc
    };
    let mut high_terms = Vec::new();
    if let Some(wt) = w_hh {
        high_terms.push(conv2d(xh, wt, None, stride, pad, groups(wt)));
    }
    if let Some(wt) = w_lh {
        high_terms.push(conv2d(&upsample2(xl), wt, None, stride, pad, 1));
    }
    let mut low_terms = Vec::new();
    if let Some(wt) = w_ll {
        low_terms.push(conv2d(xl, wt, None, stride, pad, groups(wt)));
    }
    if let Some(wt) = w_hl {
        low_terms.push(conv2d(&pool2(xh), wt, None, stride, pad, 1));
    }
    let yh = branch(high_terms, out_channels.0, b_high, h, wd);
    let yl = branch(low_terms, out_channels.1, b_low, h / 2, wd / 2);
    (yh, yl)
}

/// Per-sample grouped 3x3 then grouped 1x1 plus bias, evaluated as dense
/// convolutions with block-diagonal weights.
pub fn apply_predicted(
    x: &Tensor<f64>,
    spatial: &Tensor<f64>,
    pointwise: &Tensor<f64>,
    bias: &Tensor<f64>,
    groups: usize,
) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cg = c / groups;
    let mut out = Vec::with_capacity(n * c * h * w);
    for s in 0..n {
        let xs = Tensor::from_vec(&[1, c, h, w], x.data()[s * c * h * w..(s + 1) * c * h * w].to_vec()).unwrap();
        let take = |t: &Tensor<f64>, k: usize| {
            let per = c * cg * k * k;
            Tensor::from_vec(&[c, cg, k, k], t.data()[s * per..(s + 1) * per].to_vec()).unwrap()
        };
        let bs = Tensor::from_vec(&[c], bias.data()[s * c..(s + 1) * c].to_vec()).unwrap();
        let mid = conv2d(&xs, &block_diagonal(&take(spatial, 3), groups), None, 1, 1, 1);
        let y = conv2d(&mid, &block_diagonal(&take(pointwise, 1), groups), Some(&bs), 1, 0, 1);
        out.extend_from_slice(y.data());
    }
    Tensor::from_vec(&[n, c, h, w], out).unwrap()
}
