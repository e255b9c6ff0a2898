//! Fixture builders shared by the integration tests.
#![allow(dead_code)]

use aesfa_core::data::rgb_to_tensor;
use aesfa_core::freq_ops::{OctConvParams, OctavePair};
use aesfa_core::kernel_prediction::AestheticKernelSet;
use aesfa_core::tensor::Tensor;
use aesfa_testkit::fixtures::{content_image, random_tensor, style_image};
use aesfa_testkit::oracles;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random octave conv weights. Depthwise layers keep the channel counts of
/// the input.
#[allow(clippy::too_many_arguments)]
pub fn random_octconv(
    rng: &mut ChaCha8Rng,
    input: (usize, usize),
    output: (usize, usize),
    k: usize,
    stride: usize,
    padding: usize,
    depthwise: bool,
    bias: bool,
) -> OctConvParams<f64> {
    let (ih, il) = input;
    let (oh, ol) = if depthwise { input } else { output };
    let mut w = |from: usize, to: usize, cross: bool| {
        if from == 0 || to == 0 || (depthwise && cross) {
            None
        } else {
            let cin = if depthwise { 1 } else { from };
            Some(random_tensor(rng, &[to, cin, k, k]))
        }
    };
    let (w_hh, w_hl, w_lh, w_ll) = (w(ih, oh, false), w(ih, ol, true), w(il, oh, true), w(il, ol, false));
    let mut b = |c: usize| (bias && c > 0).then(|| random_tensor(rng, &[c]));
    let (b_high, b_low) = (b(oh), b(ol));
    OctConvParams {
        w_hh,
        w_hl,
        w_lh,
        w_ll,
        b_high,
        b_low,
        stride,
        padding,
        depthwise,
        out_channels: (oh, ol),
    }
}

pub fn random_pair(rng: &mut ChaCha8Rng, n: usize, (ch, cl): (usize, usize), h: usize, w: usize) -> OctavePair<f64> {
    OctavePair::new(
        random_tensor(rng, &[n, ch, h, w]),
        random_tensor(rng, &[n, cl, h / 2, w / 2]),
    )
    .unwrap()
}

/// Octave conv assembled term by term from the naive oracles.
pub fn oracle_octconv(x: &OctavePair<f64>, p: &OctConvParams<f64>) -> (Tensor<f64>, Tensor<f64>) {
    oracles::octconv(
        &x.high,
        &x.low,
        [p.w_hh.as_ref(), p.w_hl.as_ref(), p.w_lh.as_ref(), p.w_ll.as_ref()],
        p.b_high.as_ref(),
        p.b_low.as_ref(),
        p.out_channels,
        p.stride,
        p.padding,
        p.depthwise,
    )
}

pub fn cast_params(p: &OctConvParams<f64>) -> OctConvParams<f32> {
    let c = |t: &Option<Tensor<f64>>| t.as_ref().map(|t| t.cast::<f32>());
    OctConvParams {
        w_hh: c(&p.w_hh),
        w_hl: c(&p.w_hl),
        w_lh: c(&p.w_lh),
        w_ll: c(&p.w_ll),
        b_high: c(&p.b_high),
        b_low: c(&p.b_low),
        stride: p.stride,
        padding: p.padding,
        depthwise: p.depthwise,
        out_channels: p.out_channels,
    }
}

pub fn cast_pair(x: &OctavePair<f64>) -> OctavePair<f32> {
    OctavePair::new(x.high.cast(), x.low.cast()).unwrap()
}

pub fn random_kernels(rng: &mut ChaCha8Rng, n: usize, c: usize, groups: usize) -> AestheticKernelSet<f64> {
    let cg = if c == 0 { 0 } else { c / groups };
    AestheticKernelSet {
        spatial: random_tensor(rng, &[n, c, cg, 3, 3]),
        pointwise: random_tensor(rng, &[n, c, cg, 1, 1]),
        bias: random_tensor(rng, &[n, c]),
        groups,
    }
}

/// Relative error that tolerates empty tensors.
pub fn rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    if b.numel() == 0 {
        assert_eq!(a.shape(), b.shape());
        return 0.0;
    }
    oracles::rel_err(a, b)
}

/// Stack of seeded content images, `[seeds.len(), 3, h, w]`.
pub fn contents(seeds: &[u64], w: u32, h: u32) -> Tensor<f32> {
    let items: Vec<Tensor<f32>> = seeds.iter().map(|&s| rgb_to_tensor(&content_image(s, w, h))).collect();
    Tensor::stack_batch(&items).unwrap()
}

pub fn styles(seeds: &[u64], w: u32, h: u32) -> Tensor<f32> {
    let items: Vec<Tensor<f32>> = seeds.iter().map(|&s| rgb_to_tensor(&style_image(s, w, h))).collect();
    Tensor::stack_batch(&items).unwrap()
}

pub fn fraction_differing(a: &Tensor<f32>, b: &Tensor<f32>, threshold: f32) -> f64 {
    let n = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| (*x - *y).abs() > threshold)
        .count();
    n as f64 / a.numel() as f64
}

pub fn pick(rng: &mut ChaCha8Rng, options: &[usize]) -> usize {
    options[rng.gen_range(0..options.len())]
}
