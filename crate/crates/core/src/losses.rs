//! Distribution-matching perceptual losses and the aesthetic contrastive
//! loss.
//!
//! Every distance here has the form `‖f − EFDM(f, g)‖₂`: the live features
//! `f` against the style's sorted values scattered onto `f`'s rank order.
//! The matched target is treated as a constant, so gradients flow through
//! `f` only. Because the target depends on `f` only through its ranks, this
//! is also the exact derivative wherever no two entries of `f` tie.

use std::cmp::Ordering;

use aesfa_tensor::{Float, Graph, Tensor, Var};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::PerceptualExtractor;
use crate::freq_ops::{OctVar, OctavePair};
use crate::model::{EncoderKind, StyleModel};
use crate::params::Bound;

/// Extractor stage (0-based) that carries the content loss.
pub const CONTENT_STAGE: usize = 2;
/// Added to every contrastive denominator.
pub const CONTRASTIVE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub lambda_aes: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_c: 1.0,
            lambda_s: 10.0,
            lambda_aes: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
            ("lambda_aes", self.lambda_aes),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

pub fn total_loss(lc: f64, ls: f64, laes: f64, w: &LossWeights) -> f64 {
    w.lambda_c * lc + w.lambda_s * ls + w.lambda_aes * laes
}

/// Negative selection settings.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveConfig<'a, T> {
    pub k: usize,
    pub selection_extractor: &'a PerceptualExtractor<T>,
}

fn cmp<T: Float>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Indices that sort `x` ascending; equal values keep their original order.
pub fn stable_argsort<T: Float>(x: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp(&x[a], &x[b]));
    idx
}

fn sorted<T: Float>(y: &[T]) -> Vec<T> {
    let mut s = y.to_vec();
    s.sort_unstable_by(cmp);
    s
}

/// Value of rank `r` (out of `n`) in the sorted target of length `m`.
/// Identity when `m == n`; otherwise the nearest mid-rank quantile.
#[inline]
fn quantile<T: Float>(ys: &[T], r: usize, n: usize) -> T {
    let m = ys.len();
    if m == n {
        ys[r]
    } else {
        ys[((2 * r + 1) * m) / (2 * n)]
    }
}

/// Exact feature distribution matching: `y`'s sorted values placed at the
/// rank positions of `x`.
pub fn efdm<T: Float>(x: &[T], y: &[T]) -> Result<Vec<T>> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "efdm lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let mut out = vec![T::zero(); x.len()];
    scatter_matched(x, &sorted(y), &mut out);
    Ok(out)
}

fn scatter_matched<T: Float>(x: &[T], ys_sorted: &[T], out: &mut [T]) {
    let n = x.len();
    for (r, &i) in stable_argsort(x).iter().enumerate() {
        out[i] = quantile(ys_sorted, r, n);
    }
}

fn plane<T: Float>(t: &Tensor<T>, n: usize, c: usize) -> &[T] {
    let s = t.shape();
    let hw = s[2] * s[3];
    let start = (n * s[1] + c) * hw;
    &t.data()[start..start + hw]
}

fn check_pairable<T: Float>(x: &Tensor<T>, xi: usize, y: &Tensor<T>, yj: usize) -> Result<()> {
    let [xn, xc, xh, xw] = x.dims4()?;
    let [yn, yc, yh, yw] = y.dims4()?;
    if xc != yc || xi >= xn || yj >= yn {
        return Err(Error::invalid(format!(
            "cannot match sample {xi} of {:?} against sample {yj} of {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if xh * xw > 0 && yh * yw == 0 {
        return Err(Error::invalid("matching against an empty target"));
    }
    Ok(())
}

/// Per-channel EFDM target for sample `xi` of `x` from sample `yj` of `y`,
/// shaped `[1, C, H, W]` like the source sample. Spatial sizes may differ;
/// the target's quantiles are then resampled to the source length.
pub fn efdm_target<T: Float>(x: &Tensor<T>, xi: usize, y: &Tensor<T>, yj: usize) -> Result<Tensor<T>> {
    check_pairable(x, xi, y, yj)?;
    let s = x.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    let mut out = Tensor::zeros(&[1, c, s[2], s[3]]);
    out.data_mut()
        .par_chunks_mut(hw.max(1))
        .enumerate()
        .for_each(|(ch, o)| scatter_matched(plane(x, xi, ch), &sorted(plane(y, yj, ch)), o));
    Ok(out)
}

/// `‖x_xi − EFDM(x_xi, y_yj)‖₂` without materialising the target: the
/// norm only depends on the two sorted value lists.
pub fn matched_distance<T: Float>(x: &Tensor<T>, xi: usize, y: &Tensor<T>, yj: usize) -> Result<f64> {
    check_pairable(x, xi, y, yj)?;
    let c = x.shape()[1];
    let sq: Vec<f64> = (0..c)
        .into_par_iter()
        .map(|ch| sorted_sq_distance(&sorted(plane(x, xi, ch)), &sorted(plane(y, yj, ch))))
        .collect();
    Ok(sq.iter().sum::<f64>().sqrt())
}

fn sorted_sq_distance<T: Float>(xs: &[T], ys: &[T]) -> f64 {
    let n = xs.len();
    xs.iter()
        .enumerate()
        .map(|(r, &v)| {
            let d = (v - quantile(ys, r, n)).to_f64_lossy();
            d * d
        })
        .sum()
}

fn check_same_shape<T: Float>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn batch_of<T: Float>(t: &Tensor<T>) -> Result<usize> {
    Ok(t.dims4()?[0])
}

fn sample_norm<T: Float>(t: &Tensor<T>, n: usize) -> f64 {
    let per = t.numel() / t.shape()[0].max(1);
    t.data()[n * per..(n + 1) * per]
        .iter()
        .map(|v| v.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `‖f₃(out) − f₃(content)‖₂`, averaged over the batch.
pub fn content_loss<T: Float>(out: &Tensor<T>, content: &Tensor<T>, ext: &PerceptualExtractor<T>) -> Result<f64> {
    check_same_shape(out, content, "content_loss")?;
    let fo = ext.features(out)?.swap_remove(CONTENT_STAGE);
    let fc = ext.features(content)?.swap_remove(CONTENT_STAGE);
    let diff = Tensor::from_vec(
        fo.shape(),
        fo.data().iter().zip(fc.data()).map(|(&a, &b)| a - b).collect(),
    )?;
    let n = batch_of(out)?;
    Ok((0..n).map(|i| sample_norm(&diff, i)).sum::<f64>() / n as f64)
}

/// `Σₙ ‖fₙ(out) − EFDM(fₙ(out), fₙ(style))‖₂` over the four stages,
/// averaged over the batch. Sample `i` of `out` is matched with sample `i`
/// of `style`; spatial sizes may differ.
pub fn style_loss<T: Float>(out: &Tensor<T>, style: &Tensor<T>, ext: &PerceptualExtractor<T>) -> Result<f64> {
    let n = batch_of(out)?;
    if batch_of(style)? != n {
        return Err(Error::invalid(format!(
            "style_loss: batch {n} against {} styles",
            batch_of(style)?
        )));
    }
    let fo = ext.features(out)?;
    let fs = ext.features(style)?;
    let mut total = 0.0;
    for i in 0..n {
        for (a, b) in fo.iter().zip(&fs) {
            total += matched_distance(a, i, b, i)?;
        }
    }
    Ok(total / n as f64)
}

/// Style distance from every output `i` to every style `j`, computed on
/// precomputed extractor stages.
pub fn style_distances<T: Float>(out_feats: &[Tensor<T>], style_feats: &[Tensor<T>]) -> Result<Vec<Vec<f64>>> {
    if out_feats.len() != style_feats.len() || out_feats.is_empty() {
        return Err(Error::invalid("stage counts differ"));
    }
    let n = batch_of(&out_feats[0])?;
    let m = batch_of(&style_feats[0])?;
    // Sort every channel once per sample instead of once per pair.
    let sort_all = |feats: &[Tensor<T>], count: usize| -> Result<Vec<Vec<Vec<Vec<T>>>>> {
        (0..count)
            .map(|i| {
                feats
                    .iter()
                    .map(|f| {
                        let c = f.dims4()?[1];
                        Ok((0..c).into_par_iter().map(|ch| sorted(plane(f, i, ch))).collect())
                    })
                    .collect()
            })
            .collect()
    };
    for (a, b) in out_feats.iter().zip(style_feats) {
        check_pairable(a, 0, b, 0)?;
    }
    let os = sort_all(out_feats, n)?;
    let ss = sort_all(style_feats, m)?;
    Ok((0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    os[i]
                        .iter()
                        .zip(&ss[j])
                        .map(|(xo, ys)| {
                            xo.iter()
                                .zip(ys)
                                .map(|(x, y)| sorted_sq_distance(x, y))
                                .sum::<f64>()
                                .sqrt()
                        })
                        .sum()
                })
                .collect()
        })
        .collect())
}

/// For each row `i`, the `k` columns `j ≠ i` of smallest distance, ascending,
/// ties to the lower index.
pub fn nearest_negatives(dist: &[Vec<f64>], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = dist.len();
    if n < 2 {
        return Err(Error::invalid("contrastive loss requires negatives (batch < 2)"));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", n - 1)));
    }
    Ok(dist
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut cand: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
            cand.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal));
            cand.truncate(k);
            cand
        })
        .collect())
}

/// Hard negatives for each output: the `k` other styles closest in
/// extractor style distance.
pub fn select_negatives<T: Float>(
    outputs: &Tensor<T>,
    styles: &Tensor<T>,
    cfg: &ContrastiveConfig<'_, T>,
) -> Result<Vec<Vec<usize>>> {
    let n = batch_of(outputs)?;
    if n < 2 {
        return Err(Error::invalid("contrastive loss requires negatives (batch < 2)"));
    }
    if batch_of(styles)? != n {
        return Err(Error::invalid(format!(
            "{n} outputs against {} styles",
            batch_of(styles)?
        )));
    }
    let ext = cfg.selection_extractor;
    let d = style_distances(&ext.features(outputs)?, &ext.features(styles)?)?;
    nearest_negatives(&d, cfg.k)
}

fn branches<T>(p: &OctavePair<T>) -> [&Tensor<T>; 2] {
    [&p.high, &p.low]
}

/// Contrastive loss on values: output and style features are given per
/// encoder layer, negatives per sample.
pub fn contrastive_from_features<T: Float>(
    out_feats: &[OctavePair<T>],
    style_feats: &[OctavePair<T>],
    negatives: &[Vec<usize>],
) -> Result<f64> {
    check_contrastive(out_feats.len(), style_feats.len(), negatives)?;
    let mut total = 0.0;
    for (fo, fs) in out_feats.iter().zip(style_feats) {
        for (o, s) in branches(fo).into_iter().zip(branches(fs)) {
            if o.numel() == 0 {
                continue;
            }
            for (i, neg) in negatives.iter().enumerate() {
                let num = matched_distance(o, i, s, i)?;
                let mut den = 0.0;
                for &j in neg {
                    den += matched_distance(o, i, s, j)?;
                }
                total += num / (den + CONTRASTIVE_EPS);
            }
        }
    }
    Ok(total)
}

fn check_contrastive(layers_out: usize, layers_style: usize, negatives: &[Vec<usize>]) -> Result<()> {
    if layers_out != layers_style {
        return Err(Error::invalid(format!(
            "{layers_out} output layers vs {layers_style} style layers"
        )));
    }
    if negatives.len() < 2 {
        return Err(Error::invalid("contrastive loss requires negatives (batch < 2)"));
    }
    for (i, neg) in negatives.iter().enumerate() {
        if neg.is_empty() || neg.iter().any(|&j| j == i || j >= negatives.len()) {
            return Err(Error::invalid(format!("sample {i}: invalid negatives {neg:?}")));
        }
    }
    Ok(())
}

/// Contrastive loss of a batch of stylized `outputs` against their
/// positive `styles`, with features from the model's aesthetic encoder and
/// negatives chosen by [`select_negatives`].
pub fn aesthetic_contrastive_loss<T: Float>(
    outputs: &Tensor<T>,
    styles: &Tensor<T>,
    model: &StyleModel<T>,
    cfg: &ContrastiveConfig<'_, T>,
) -> Result<f64> {
    let negatives = select_negatives(outputs, styles, cfg)?;
    let fo = model.encoder_features(EncoderKind::Aesthetic, outputs)?;
    let fs = model.encoder_features(EncoderKind::Aesthetic, styles)?;
    contrastive_from_features(&fo, &fs, &negatives)
}

/// Mean over the batch of per-sample norms of `x`.
fn mean_sample_norm<T: Float>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let n = g.shape(x)[0];
    if n == 1 {
        return Ok(g.norm(x));
    }
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let xi = g.select_batch(x, i)?;
        terms.push(g.norm(xi));
    }
    let s = g.sum(&terms)?;
    Ok(g.scale(s, 1.0 / n as f64))
}

/// Graph form of [`content_loss`] against precomputed content features.
pub fn content_loss_graph<T: Float>(g: &mut Graph<T>, out_stage: Var, content_stage: &Tensor<T>) -> Result<Var> {
    if g.shape(out_stage) != content_stage.shape() {
        return Err(Error::invalid(format!(
            "content features {:?} vs {:?}",
            g.shape(out_stage),
            content_stage.shape()
        )));
    }
    let t = g.constant(content_stage.clone());
    let d = g.sub(out_stage, t)?;
    mean_sample_norm(g, d)
}

/// Batched EFDM target for `live` (graph value) against `targets`, sample
/// `i` paired with `pairing[i]`.
fn batched_target<T: Float>(live: &Tensor<T>, targets: &Tensor<T>, pairing: &[usize]) -> Result<Tensor<T>> {
    let items = pairing
        .iter()
        .enumerate()
        .map(|(i, &j)| efdm_target(live, i, targets, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack_batch(&items)?)
}

/// Graph form of [`style_loss`] against precomputed style stages.
pub fn style_loss_graph<T: Float>(g: &mut Graph<T>, out_stages: &[Var], style_stages: &[Tensor<T>]) -> Result<Var> {
    if out_stages.len() != style_stages.len() {
        return Err(Error::invalid("stage counts differ"));
    }
    let n = g.shape(out_stages[0])[0];
    let pairing: Vec<usize> = (0..n).collect();
    let mut terms = Vec::with_capacity(out_stages.len());
    for (&o, s) in out_stages.iter().zip(style_stages) {
        let t = batched_target(g.value(o), s, &pairing)?;
        let t = g.constant(t);
        let d = g.sub(o, t)?;
        terms.push(mean_sample_norm(g, d)?);
    }
    Ok(g.sum(&terms)?)
}

/// Graph form of [`contrastive_from_features`]: output features are live,
/// style features and negatives are fixed.
pub fn contrastive_graph<T: Float>(
    g: &mut Graph<T>,
    out_feats: &[OctVar],
    style_feats: &[OctavePair<T>],
    negatives: &[Vec<usize>],
) -> Result<Var> {
    check_contrastive(out_feats.len(), style_feats.len(), negatives)?;
    let mut ratios = Vec::new();
    for (fo, fs) in out_feats.iter().zip(style_feats) {
        for (o, s) in [fo.high, fo.low].into_iter().zip(branches(fs)) {
            if g.value(o).numel() == 0 {
                continue;
            }
            for (i, neg) in negatives.iter().enumerate() {
                let oi = g.select_batch(o, i)?;
                let dist = |g: &mut Graph<T>, j: usize| -> Result<Var> {
                    let t = efdm_target(g.value(o), i, s, j)?;
                    let t = g.constant(t);
                    let d = g.sub(oi, t)?;
                    Ok(g.norm(d))
                };
                let num = dist(g, i)?;
                let dens = neg.iter().map(|&j| dist(g, j)).collect::<Result<Vec<_>>>()?;
                let den = g.sum(&dens)?;
                let den = g.add_constant(den, CONTRASTIVE_EPS)?;
                ratios.push(g.div(num, den)?);
            }
        }
    }
    if ratios.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    Ok(g.sum(&ratios)?)
}

/// Everything the loss needs that does not depend on the trainable weights
/// of the current step.
#[derive(Clone, Debug)]
pub struct LossTargets<T> {
    /// Extractor stage [`CONTENT_STAGE`] of the content batch.
    pub content_stage: Tensor<T>,
    /// All extractor stages of the style batch.
    pub style_stages: Vec<Tensor<T>>,
    /// Aesthetic-encoder features of the style batch.
    pub style_encoded: Vec<OctavePair<T>>,
    /// Fixed negatives; selected from the live outputs when `None`.
    pub negatives: Option<Vec<Vec<usize>>>,
}

impl<T: Float> LossTargets<T> {
    pub fn prepare(
        model: &StyleModel<T>,
        ext: &PerceptualExtractor<T>,
        content: &Tensor<T>,
        style: &Tensor<T>,
    ) -> Result<Self> {
        let content_stage = ext.features(content)?.swap_remove(CONTENT_STAGE);
        Ok(LossTargets {
            content_stage,
            style_stages: ext.features(style)?,
            style_encoded: model.encoder_features(EncoderKind::Aesthetic, style)?,
            negatives: None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct LossTerms {
    pub content: Var,
    pub style: Var,
    pub aes: Var,
    pub total: Var,
    pub negatives: Vec<Vec<usize>>,
}

/// Builds all loss terms for a stylized batch `output` on `g`.
#[allow(clippy::too_many_arguments)]
pub fn loss_terms<T: Float>(
    g: &mut Graph<T>,
    model: &StyleModel<T>,
    p: &Bound,
    output: Var,
    targets: &LossTargets<T>,
    ext: &PerceptualExtractor<T>,
    weights: &LossWeights,
    k: usize,
) -> Result<LossTerms> {
    let stages = ext.features_graph(g, output)?;
    let content = content_loss_graph(g, stages[CONTENT_STAGE], &targets.content_stage)?;
    let style = style_loss_graph(g, &stages, &targets.style_stages)?;
    let negatives = match &targets.negatives {
        Some(n) => n.clone(),
        None => {
            let live: Vec<Tensor<T>> = stages.iter().map(|&s| g.value(s).clone()).collect();
            nearest_negatives(&style_distances(&live, &targets.style_stages)?, k)?
        }
    };
    let enc = model.encoder(EncoderKind::Aesthetic).features(g, p, output)?;
    let aes = contrastive_graph(g, &enc, &targets.style_encoded, &negatives)?;
    let wc = g.scale(content, weights.lambda_c);
    let ws = g.scale(style, weights.lambda_s);
    let wa = g.scale(aes, weights.lambda_aes);
    let total = g.sum(&[wc, ws, wa])?;
    Ok(LossTerms {
        content,
        style,
        aes,
        total,
        negatives,
    })
}
