//! Zero-padded 2-D convolution over NCHW tensors, with grouped and depthwise
//! variants and their adjoints.

use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::gemm::{gemm, MatMut, MatRef};
use crate::scalar::Float;
use crate::tensor::Tensor;

/// Stride, zero padding and channel groups of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec {
            stride,
            padding,
            groups,
        }
    }

    /// Stride 1, padding `k / 2`, one group.
    pub const fn same(k: usize) -> Self {
        ConvSpec::new(1, k / 2, 1)
    }
}

/// Budget for one im2col tile, in elements.
const TILE_ELEMS: usize = 1 << 20;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: ConvSpec,
}

impl Geom {
    fn new(x: [usize; 3], wshape: &[usize], spec: ConvSpec) -> Result<Self> {
        let [cin, h, w] = x;
        let &[cout, cin_g, kh, kw] = wshape else {
            return Err(TensorError::shape(
                "conv2d",
                format!("weight must be 4-D, got {wshape:?}"),
            ));
        };
        if kh != kw {
            return Err(TensorError::shape("conv2d", "only square kernels"));
        }
        if spec.stride == 0 || spec.groups == 0 {
            return Err(TensorError::invalid("conv2d", "stride and groups must be positive"));
        }
        if cin % spec.groups != 0 || cout % spec.groups != 0 || cin / spec.groups != cin_g {
            return Err(TensorError::shape(
                "conv2d",
                format!(
                    "input channels {cin}, weight {wshape:?}, groups {} are inconsistent",
                    spec.groups
                ),
            ));
        }
        if h + 2 * spec.padding < kh || w + 2 * spec.padding < kw {
            return Err(TensorError::shape(
                "conv2d",
                format!("input {h}x{w} smaller than kernel {kh}x{kw}"),
            ));
        }
        let ho = (h + 2 * spec.padding - kh) / spec.stride + 1;
        let wo = (w + 2 * spec.padding - kw) / spec.stride + 1;
        Ok(Geom {
            cin,
            h,
            w,
            cout,
            k: kh,
            ho,
            wo,
            spec,
        })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }

    /// Rows of the unfolded patch matrix per group.
    fn patch(&self) -> usize {
        self.cin_g() * self.k * self.k
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.cout * self.ho * self.wo
    }

    fn w_len(&self) -> usize {
        self.cout * self.patch()
    }

    fn depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    fn rows_per_tile(&self) -> usize {
        (TILE_ELEMS / (self.patch() * self.wo).max(1)).clamp(1, self.ho.max(1))
    }

    #[inline]
    fn in_coord(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let v = (o * self.spec.stride + kk) as isize - self.spec.padding as isize;
        (v >= 0 && (v as usize) < limit).then_some(v as usize)
    }
}

/// Output positions `[lo, hi)` whose input coordinate
/// `o * stride + kk - pad` lies inside `[0, n_in)`.
#[inline]
fn valid_range(n_out: usize, stride: usize, pad: usize, kk: usize, n_in: usize) -> (usize, usize) {
    if n_in + pad <= kk {
        return (0, 0);
    }
    let hi = ((n_in - 1 + pad - kk) / stride + 1).min(n_out);
    let lo = if pad > kk { (pad - kk).div_ceil(stride) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col<T: Float>(g: &Geom, x: &[T], oy0: usize, oy1: usize, col: &mut [T]) {
    let cols = (oy1 - oy0) * g.wo;
    let (k, s, p) = (g.k, g.spec.stride, g.spec.padding);
    for ci in 0..g.cin_g() {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_range(g.wo, s, p, kx, g.w);
                for (t, oy) in (oy0..oy1).enumerate() {
                    let seg = &mut dst[t * g.wo..(t + 1) * g.wo];
                    match g.in_coord(oy, ky, g.h) {
                        None => seg.fill(T::zero()),
                        Some(iy) => {
                            seg[..lo].fill(T::zero());
                            seg[hi..].fill(T::zero());
                            if lo < hi {
                                let base = iy * g.w + lo * s + kx - p;
                                let src = &plane[base..];
                                if s == 1 {
                                    seg[lo..hi].copy_from_slice(&src[..hi - lo]);
                                } else {
                                    for (j, d) in seg[lo..hi].iter_mut().enumerate() {
                                        *d = src[j * s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Float>(g: &Geom, col: &[T], oy0: usize, oy1: usize, dx: &mut [T]) {
    let cols = (oy1 - oy0) * g.wo;
    let (k, s, p) = (g.k, g.spec.stride, g.spec.padding);
    for ci in 0..g.cin_g() {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_range(g.wo, s, p, kx, g.w);
                if lo >= hi {
                    continue;
                }
                for (t, oy) in (oy0..oy1).enumerate() {
                    let Some(iy) = g.in_coord(oy, ky, g.h) else {
                        continue;
                    };
                    let seg = &src[t * g.wo + lo..t * g.wo + hi];
                    let base = iy * g.w + lo * s + kx - p;
                    let dst = &mut plane[base..];
                    if s == 1 {
                        dst[..hi - lo].iter_mut().zip(seg).for_each(|(d, &v)| *d += v);
                    } else {
                        for (j, &v) in seg.iter().enumerate() {
                            dst[j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Float>(g: &Geom, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let (k, s, p) = (g.k, g.spec.stride, g.spec.padding);
    out.par_chunks_mut(g.ho * g.wo).enumerate().for_each(|(c, o)| {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        let kern = &w[c * k * k..(c + 1) * k * k];
        o.fill(bias.map_or(T::zero(), |b| b[c]));
        for oy in 0..g.ho {
            let orow = &mut o[oy * g.wo..(oy + 1) * g.wo];
            for ky in 0..k {
                let Some(iy) = g.in_coord(oy, ky, g.h) else {
                    continue;
                };
                for kx in 0..k {
                    let (lo, hi) = valid_range(g.wo, s, p, kx, g.w);
                    if lo >= hi {
                        continue;
                    }
                    let kv = kern[ky * k + kx];
                    let src = &plane[iy * g.w + lo * s + kx - p..];
                    let dst = &mut orow[lo..hi];
                    if s == 1 {
                        dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v * kv);
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d += src[j * s] * kv;
                        }
                    }
                }
            }
        }
    });
}

fn depthwise_backward_input<T: Float>(g: &Geom, dy: &[T], w: &[T], dx: &mut [T]) {
    let (k, s, p) = (g.k, g.spec.stride, g.spec.padding);
    dx.par_chunks_mut(g.h * g.w).enumerate().for_each(|(c, d)| {
        d.fill(T::zero());
        let grad = &dy[c * g.ho * g.wo..(c + 1) * g.ho * g.wo];
        let kern = &w[c * k * k..(c + 1) * k * k];
        for oy in 0..g.ho {
            let grow = &grad[oy * g.wo..(oy + 1) * g.wo];
            for ky in 0..k {
                let Some(iy) = g.in_coord(oy, ky, g.h) else {
                    continue;
                };
                for kx in 0..k {
                    let (lo, hi) = valid_range(g.wo, s, p, kx, g.w);
                    if lo >= hi {
                        continue;
                    }
                    let kv = kern[ky * k + kx];
                    let dst = &mut d[iy * g.w + lo * s + kx - p..];
                    let src = &grow[lo..hi];
                    if s == 1 {
                        dst.iter_mut().zip(src).for_each(|(o, &v)| *o += v * kv);
                    } else {
                        for (j, &v) in src.iter().enumerate() {
                            dst[j * s] += v * kv;
                        }
                    }
                }
            }
        }
    });
}

fn depthwise_backward_weight<T: Float>(g: &Geom, dy: &[T], x: &[T], dw: &mut [T]) {
    let (k, s, p) = (g.k, g.spec.stride, g.spec.padding);
    dw.par_chunks_mut(k * k).enumerate().for_each(|(c, d)| {
        let grad = &dy[c * g.ho * g.wo..(c + 1) * g.ho * g.wo];
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let (lo, hi) = valid_range(g.wo, s, p, kx, g.w);
                let mut acc = T::zero();
                if lo < hi {
                    for oy in 0..g.ho {
                        let Some(iy) = g.in_coord(oy, ky, g.h) else {
                            continue;
                        };
                        let grow = &grad[oy * g.wo + lo..oy * g.wo + hi];
                        let src = &plane[iy * g.w + lo * s + kx - p..];
                        if s == 1 {
                            acc += grow.iter().zip(src).map(|(&a, &b)| a * b).sum::<T>();
                        } else {
                            for (j, &v) in grow.iter().enumerate() {
                                acc += v * src[j * s];
                            }
                        }
                    }
                }
                d[ky * k + kx] += acc;
            }
        }
    });
}

fn forward_sample<T: Float>(g: &Geom, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    if g.depthwise() {
        depthwise_forward(g, x, w, bias, out);
        return;
    }
    let (cin_g, cout_g, patch) = (g.cin_g(), g.cout_g(), g.patch());
    let hwo = g.ho * g.wo;
    let mut col = Vec::new();
    for gi in 0..g.spec.groups {
        let xg = &x[gi * cin_g * g.h * g.w..];
        let wg = &w[gi * cout_g * patch..];
        let og = &mut out[gi * cout_g * hwo..(gi + 1) * cout_g * hwo];
        let a = MatRef {
            ptr: wg.as_ptr(),
            rs: patch as isize,
            cs: 1,
        };
        if g.pointwise() {
            let b = MatRef {
                ptr: xg.as_ptr(),
                rs: hwo as isize,
                cs: 1,
            };
            let c = MatMut {
                ptr: og.as_mut_ptr(),
                rs: hwo as isize,
                cs: 1,
            };
            unsafe { gemm(cout_g, patch, hwo, a, b, T::zero(), c) };
        } else {
            let step = g.rows_per_tile();
            let mut oy0 = 0;
            while oy0 < g.ho {
                let oy1 = (oy0 + step).min(g.ho);
                let cols = (oy1 - oy0) * g.wo;
                col.resize(patch * cols, T::zero());
                im2col(g, xg, oy0, oy1, &mut col);
                let b = MatRef {
                    ptr: col.as_ptr(),
                    rs: cols as isize,
                    cs: 1,
                };
                let c = MatMut {
                    ptr: og[oy0 * g.wo..].as_mut_ptr(),
                    rs: hwo as isize,
                    cs: 1,
                };
                unsafe { gemm(cout_g, patch, cols, a, b, T::zero(), c) };
                oy0 = oy1;
            }
        }
        if let Some(bias) = bias {
            for (co, plane) in og.chunks_mut(hwo).enumerate() {
                let bv = bias[gi * cout_g + co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

fn backward_input_sample<T: Float>(g: &Geom, dy: &[T], w: &[T], dx: &mut [T]) {
    if g.depthwise() {
        depthwise_backward_input(g, dy, w, dx);
        return;
    }
    let (cin_g, cout_g, patch) = (g.cin_g(), g.cout_g(), g.patch());
    let hwo = g.ho * g.wo;
    let hw = g.h * g.w;
    let mut col = Vec::new();
    for gi in 0..g.spec.groups {
        let wg = &w[gi * cout_g * patch..];
        let dyg = &dy[gi * cout_g * hwo..];
        let dxg = &mut dx[gi * cin_g * hw..(gi + 1) * cin_g * hw];
        // W^T viewed as patch x cout_g
        let a = MatRef {
            ptr: wg.as_ptr(),
            rs: 1,
            cs: patch as isize,
        };
        if g.pointwise() {
            let b = MatRef {
                ptr: dyg.as_ptr(),
                rs: hwo as isize,
                cs: 1,
            };
            let c = MatMut {
                ptr: dxg.as_mut_ptr(),
                rs: hw as isize,
                cs: 1,
            };
            unsafe { gemm(patch, cout_g, hwo, a, b, T::zero(), c) };
            continue;
        }
        dxg.fill(T::zero());
        let step = g.rows_per_tile();
        let mut oy0 = 0;
        while oy0 < g.ho {
            let oy1 = (oy0 + step).min(g.ho);
            let cols = (oy1 - oy0) * g.wo;
            col.resize(patch * cols, T::zero());
            let b = MatRef {
                ptr: dyg[oy0 * g.wo..].as_ptr(),
                rs: hwo as isize,
                cs: 1,
            };
            let c = MatMut {
                ptr: col.as_mut_ptr(),
                rs: cols as isize,
                cs: 1,
            };
            unsafe { gemm(patch, cout_g, cols, a, b, T::zero(), c) };
            col2im_add(g, &col, oy0, oy1, dxg);
            oy0 = oy1;
        }
    }
}

/// Adds this sample's weight gradient into `dw`.
fn backward_weight_sample<T: Float>(g: &Geom, dy: &[T], x: &[T], dw: &mut [T]) {
    if g.depthwise() {
        depthwise_backward_weight(g, dy, x, dw);
        return;
    }
    let (cin_g, cout_g, patch) = (g.cin_g(), g.cout_g(), g.patch());
    let hwo = g.ho * g.wo;
    let hw = g.h * g.w;
    let mut col = Vec::new();
    for gi in 0..g.spec.groups {
        let xg = &x[gi * cin_g * hw..];
        let dyg = &dy[gi * cout_g * hwo..];
        let dwg = &mut dw[gi * cout_g * patch..(gi + 1) * cout_g * patch];
        let c = MatMut {
            ptr: dwg.as_mut_ptr(),
            rs: patch as isize,
            cs: 1,
        };
        if g.pointwise() {
            let a = MatRef {
                ptr: dyg.as_ptr(),
                rs: hwo as isize,
                cs: 1,
            };
            let b = MatRef {
                ptr: xg.as_ptr(),
                rs: 1,
                cs: hw as isize,
            };
            unsafe { gemm(cout_g, hwo, patch, a, b, T::one(), c) };
            continue;
        }
        let step = g.rows_per_tile();
        let mut oy0 = 0;
        while oy0 < g.ho {
            let oy1 = (oy0 + step).min(g.ho);
            let cols = (oy1 - oy0) * g.wo;
            col.resize(patch * cols, T::zero());
            im2col(g, xg, oy0, oy1, &mut col);
            let a = MatRef {
                ptr: dyg[oy0 * g.wo..].as_ptr(),
                rs: hwo as isize,
                cs: 1,
            };
            let b = MatRef {
                ptr: col.as_ptr(),
                rs: 1,
                cs: cols as isize,
            };
            unsafe { gemm(cout_g, cols, patch, a, b, T::one(), c) };
            oy0 = oy1;
        }
    }
}

/// How the weight operand relates to the batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    /// `[cout, cin/g, k, k]`, applied to every sample.
    Shared,
    /// `[n, cout, cin/g, k, k]`, one kernel per sample; bias is `[n, cout]`.
    PerSample,
}

fn geometry<T: Float>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec, mode: WeightMode) -> Result<(usize, Geom)> {
    let [n, c, h, wd] = x.dims4()?;
    let wshape = match mode {
        WeightMode::Shared => w.shape(),
        WeightMode::PerSample => {
            if w.shape().len() != 5 || w.shape()[0] != n {
                return Err(TensorError::shape(
                    "conv2d",
                    format!("per-sample weight {:?} does not match batch {n}", w.shape()),
                ));
            }
            &w.shape()[1..]
        }
    };
    Ok((n, Geom::new([c, h, wd], wshape, spec)?))
}

fn check_bias<T: Float>(b: Option<&Tensor<T>>, n: usize, g: &Geom, mode: WeightMode) -> Result<()> {
    if let Some(b) = b {
        let want = match mode {
            WeightMode::Shared => g.cout,
            WeightMode::PerSample => n * g.cout,
        };
        if b.numel() != want {
            return Err(TensorError::shape(
                "conv2d",
                format!("bias {:?} needs {want} elements", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Output shape of a convolution without running it.
pub fn conv2d_output_shape(x: &[usize], w: &[usize], spec: ConvSpec) -> Result<[usize; 4]> {
    let &[n, c, h, wd] = x else {
        return Err(TensorError::shape("conv2d", "input must be 4-D"));
    };
    let g = Geom::new([c, h, wd], w, spec)?;
    Ok([n, g.cout, g.ho, g.wo])
}

pub fn conv2d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: ConvSpec,
    mode: WeightMode,
) -> Result<Tensor<T>> {
    let (n, g) = geometry(x, w, spec, mode)?;
    check_bias(b, n, &g, mode)?;
    let mut out = Tensor::zeros(&[n, g.cout, g.ho, g.wo]);
    if g.out_len() == 0 {
        return Ok(out);
    }
    let (xd, wd) = (x.data(), w.data());
    out.data_mut()
        .par_chunks_mut(g.out_len())
        .enumerate()
        .for_each(|(i, o)| {
            let xs = &xd[i * g.in_len()..(i + 1) * g.in_len()];
            let (ws, bs) = match mode {
                WeightMode::Shared => (wd, b.map(|b| b.data())),
                WeightMode::PerSample => (
                    &wd[i * g.w_len()..(i + 1) * g.w_len()],
                    b.map(|b| &b.data()[i * g.cout..(i + 1) * g.cout]),
                ),
            };
            forward_sample(&g, xs, ws, bs, o);
        });
    Ok(out)
}

/// Gradients of a convolution; each is computed only when requested.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

/// Shared-weight gradients are reduced over the batch in sample order.
const PARTIAL_DW_BUDGET: usize = 1 << 23;

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: ConvSpec,
    mode: WeightMode,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> Result<ConvGrads<T>> {
    let (n, g) = geometry(x, w, spec, mode)?;
    if dy.shape() != [n, g.cout, g.ho, g.wo] {
        return Err(TensorError::shape(
            "conv2d_backward",
            format!("upstream gradient {:?}", dy.shape()),
        ));
    }
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    let hwo = g.ho * g.wo;

    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        if g.in_len() > 0 && g.out_len() > 0 {
            dx.data_mut().par_chunks_mut(g.in_len()).enumerate().for_each(|(i, d)| {
                let ws = match mode {
                    WeightMode::Shared => wd,
                    WeightMode::PerSample => &wd[i * g.w_len()..(i + 1) * g.w_len()],
                };
                backward_input_sample(&g, &dyd[i * g.out_len()..(i + 1) * g.out_len()], ws, d);
            });
        }
        dx
    });

    let dw = need_dw.then(|| {
        let mut dw = Tensor::zeros(w.shape());
        if g.w_len() == 0 || hwo == 0 {
            return dw;
        }
        let sample = |i: usize, d: &mut [T]| {
            backward_weight_sample(
                &g,
                &dyd[i * g.out_len()..(i + 1) * g.out_len()],
                &xd[i * g.in_len()..(i + 1) * g.in_len()],
                d,
            )
        };
        match mode {
            WeightMode::PerSample => {
                dw.data_mut()
                    .par_chunks_mut(g.w_len())
                    .enumerate()
                    .for_each(|(i, d)| sample(i, d));
            }
            WeightMode::Shared if n > 1 && n * g.w_len() <= PARTIAL_DW_BUDGET => {
                let partials: Vec<Vec<T>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut d = vec![T::zero(); g.w_len()];
                        sample(i, &mut d);
                        d
                    })
                    .collect();
                let acc = dw.data_mut();
                for p in &partials {
                    acc.iter_mut().zip(p).for_each(|(a, &v)| *a += v);
                }
            }
            WeightMode::Shared => {
                let acc = dw.data_mut();
                for i in 0..n {
                    sample(i, acc);
                }
            }
        }
        dw
    });

    let db = need_db.then(|| {
        let shape = match mode {
            WeightMode::Shared => vec![g.cout],
            WeightMode::PerSample => vec![n, g.cout],
        };
        let mut db = Tensor::zeros(&shape);
        let acc = db.data_mut();
        for i in 0..n {
            for co in 0..g.cout {
                let s: T = dyd[(i * g.cout + co) * hwo..(i * g.cout + co + 1) * hwo]
                    .iter()
                    .copied()
                    .sum();
                match mode {
                    WeightMode::Shared => acc[co] += s,
                    WeightMode::PerSample => acc[i * g.cout + co] = s,
                }
            }
        }
        db
    });

    Ok(ConvGrads { dx, dw, db })
}
