//! Octave-domain operators: the alpha channel split, the two resolution
//! changes between branches, and the four-path octave convolution.

use std::sync::Arc;

use aesfa_tensor::{ConvSpec, Float, Graph, Tensor, Var};

use crate::error::{Error, Result};

/// Splits `total` channels into `(high, low)` with `low = floor(alpha * total)`.
pub fn split_alpha(total: usize, alpha: f64) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if total == 0 {
        return Err(Error::invalid("channel count must be positive"));
    }
    let low = ((alpha * total as f64).floor() as usize).min(total);
    Ok((total - low, low))
}

/// 2x2 mean pooling with stride 2.
pub fn pool2<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    aesfa_tensor::avg_pool2(x).map_err(|e| Error::invalid(e.to_string()))
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(aesfa_tensor::upsample2(x)?)
}

/// A feature map factored into a full-resolution high-frequency branch and
/// a half-resolution low-frequency branch.
#[derive(Clone, Debug, PartialEq)]
pub struct OctavePair<T> {
    pub high: Tensor<T>,
    pub low: Tensor<T>,
}

impl<T: Float> OctavePair<T> {
    pub fn new(high: Tensor<T>, low: Tensor<T>) -> Result<Self> {
        check_pair(high.shape(), low.shape())?;
        Ok(OctavePair { high, low })
    }

    /// Wraps a plain feature map as an all-high pair with an empty low branch.
    pub fn from_high(high: Tensor<T>) -> Result<Self> {
        let [n, _, h, w] = high.dims4()?;
        let low = Tensor::zeros(&[n, 0, h / 2, w / 2]);
        Self::new(high, low)
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.high.shape()[1], self.low.shape()[1])
    }
}

fn check_pair(high: &[usize], low: &[usize]) -> Result<()> {
    let (&[n, _, h, w], &[nl, _, hl, wl]) = (high, low) else {
        return Err(Error::invalid(format!(
            "octave branches must be 4-D, got {high:?} / {low:?}"
        )));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "high branch {h}x{w} must have even spatial dims"
        )));
    }
    if n != nl || hl * 2 != h || wl * 2 != w {
        return Err(Error::invalid(format!(
            "low branch {low:?} is not half of high branch {high:?}"
        )));
    }
    Ok(())
}

/// Graph handles of an [`OctavePair`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OctVar {
    pub high: Var,
    pub low: Var,
}

impl OctVar {
    pub fn constant<T: Float>(g: &mut Graph<T>, x: &OctavePair<T>) -> Self {
        OctVar {
            high: g.constant(x.high.clone()),
            low: g.constant(x.low.clone()),
        }
    }

    pub fn to_pair<T: Float>(self, g: &Graph<T>) -> OctavePair<T> {
        OctavePair {
            high: g.value(self.high).clone(),
            low: g.value(self.low).clone(),
        }
    }

    pub fn channels<T: Float>(self, g: &Graph<T>) -> (usize, usize) {
        (g.shape(self.high)[1], g.shape(self.low)[1])
    }

    pub fn leaky_relu<T: Float>(self, g: &mut Graph<T>, slope: f64) -> Self {
        OctVar {
            high: g.leaky_relu(self.high, slope),
            low: g.leaky_relu(self.low, slope),
        }
    }

    pub fn upsample2<T: Float>(self, g: &mut Graph<T>) -> Result<Self> {
        Ok(OctVar {
            high: g.upsample2(self.high)?,
            low: g.upsample2(self.low)?,
        })
    }

    pub fn check<T: Float>(self, g: &Graph<T>) -> Result<()> {
        check_pair(g.shape(self.high), g.shape(self.low))
    }
}

/// Weights of one octave convolution. `w_hl` is the high-to-low path and
/// `w_lh` the low-to-high path. A path is `None` when its source or target
/// branch has no channels. Biases are per output branch.
#[derive(Clone, Debug)]
pub struct OctConvParams<T> {
    pub w_hh: Option<Tensor<T>>,
    pub w_hl: Option<Tensor<T>>,
    pub w_lh: Option<Tensor<T>>,
    pub w_ll: Option<Tensor<T>>,
    pub b_high: Option<Tensor<T>>,
    pub b_low: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
    /// Same-branch paths only, one filter per channel.
    pub depthwise: bool,
    /// Output channels `(high, low)`.
    pub out_channels: (usize, usize),
}

/// [`OctConvParams`] with every tensor placed on a graph.
#[derive(Clone, Copy, Debug)]
pub struct OctConvVars {
    pub w_hh: Option<Var>,
    pub w_hl: Option<Var>,
    pub w_lh: Option<Var>,
    pub w_ll: Option<Var>,
    pub b_high: Option<Var>,
    pub b_low: Option<Var>,
    pub stride: usize,
    pub padding: usize,
    pub depthwise: bool,
    pub out_channels: (usize, usize),
}

impl<T: Float> OctConvParams<T> {
    pub fn bind(&self, g: &mut Graph<T>) -> OctConvVars {
        let mut c = |t: &Option<Tensor<T>>| t.as_ref().map(|t| g.constant_shared(Arc::new(t.clone())));
        OctConvVars {
            w_hh: c(&self.w_hh),
            w_hl: c(&self.w_hl),
            w_lh: c(&self.w_lh),
            w_ll: c(&self.w_ll),
            b_high: c(&self.b_high),
            b_low: c(&self.b_low),
            stride: self.stride,
            padding: self.padding,
            depthwise: self.depthwise,
            out_channels: self.out_channels,
        }
    }
}

/// Octave convolution:
///
/// ```text
/// Y_H = f(X_H; W_HH) + f(upsample2(X_L); W_LH)
/// Y_L = f(X_L; W_LL) + f(pool2(X_H); W_HL)
/// ```
///
/// Each output branch adds its same-branch term first. Inter-branch
/// resampling always happens before the convolution.
pub fn octconv<T: Float>(x: &OctavePair<T>, p: &OctConvParams<T>) -> Result<OctavePair<T>> {
    let mut g = Graph::new();
    let xv = OctVar::constant(&mut g, x);
    let pv = p.bind(&mut g);
    let y = octconv_graph(&mut g, xv, &pv)?;
    Ok(y.to_pair(&g))
}

pub fn octconv_graph<T: Float>(g: &mut Graph<T>, x: OctVar, p: &OctConvVars) -> Result<OctVar> {
    x.check(g)?;
    if p.stride == 0 {
        return Err(Error::invalid("octconv stride must be positive"));
    }
    let (ch, cl) = x.channels(g);
    let (oh, ol) = p.out_channels;
    let presence = |w: Option<Var>, from: usize, to: usize, name: &str| -> Result<()> {
        if w.is_some() != (from > 0 && to > 0) {
            return Err(Error::invalid(format!(
                "octconv path {name}: {} but source has {from} and target {to} channels",
                if w.is_some() { "present" } else { "absent" }
            )));
        }
        Ok(())
    };
    presence(p.w_hh, ch, oh, "high->high")?;
    presence(p.w_ll, cl, ol, "low->low")?;
    if p.depthwise {
        if p.w_hl.is_some() || p.w_lh.is_some() {
            return Err(Error::invalid("depthwise octconv has no cross-frequency paths"));
        }
        if (ch, cl) != (oh, ol) {
            return Err(Error::invalid(format!(
                "depthwise octconv maps ({ch}, {cl}) channels to ({oh}, {ol})"
            )));
        }
    } else {
        presence(p.w_hl, ch, ol, "high->low")?;
        presence(p.w_lh, cl, oh, "low->high")?;
    }
    let spec = |groups: usize| ConvSpec::new(p.stride, p.padding, groups.max(1));
    let (dw_h, dw_l) = if p.depthwise { (ch, cl) } else { (1, 1) };

    let mut high_terms = Vec::with_capacity(2);
    if let Some(w) = p.w_hh {
        high_terms.push(conv(g, x.high, w, p.b_high, spec(dw_h), ch)?);
    }
    if let Some(w) = p.w_lh {
        let up = g.upsample2(x.low)?;
        let bias = if high_terms.is_empty() { p.b_high } else { None };
        high_terms.push(conv(g, up, w, bias, spec(1), cl)?);
    }
    let mut low_terms = Vec::with_capacity(2);
    if let Some(w) = p.w_ll {
        low_terms.push(conv(g, x.low, w, p.b_low, spec(dw_l), cl)?);
    }
    if let Some(w) = p.w_hl {
        let pooled = g.avg_pool2(x.high)?;
        let bias = if low_terms.is_empty() { p.b_low } else { None };
        low_terms.push(conv(g, pooled, w, bias, spec(1), ch)?);
    }

    let kernel = [p.w_hh, p.w_hl, p.w_lh, p.w_ll]
        .into_iter()
        .flatten()
        .map(|w| g.shape(w)[2])
        .next()
        .unwrap_or(1);
    let out_dim = |d: usize| (d + 2 * p.padding).saturating_sub(kernel) / p.stride + 1;
    let [n, _, h, w] = g.value(x.high).dims4()?;
    let high = finish(g, high_terms, [n, oh, out_dim(h), out_dim(w)])?;
    let low = finish(g, low_terms, [n, ol, out_dim(h / 2), out_dim(w / 2)])?;
    let y = OctVar { high, low };
    y.check(g)?;
    Ok(y)
}

fn conv<T: Float>(g: &mut Graph<T>, x: Var, w: Var, b: Option<Var>, spec: ConvSpec, in_channels: usize) -> Result<Var> {
    let want = g.shape(w)[1] * spec.groups;
    if want != in_channels {
        return Err(Error::invalid(format!(
            "octconv weight {:?} expects {want} input channels, branch has {in_channels}",
            g.shape(w)
        )));
    }
    Ok(g.conv2d(x, w, b, spec)?)
}

fn finish<T: Float>(g: &mut Graph<T>, terms: Vec<Var>, empty_shape: [usize; 4]) -> Result<Var> {
    match terms.len() {
        0 => {
            if empty_shape[1] != 0 {
                return Err(Error::invalid("octconv output branch has no contributing path"));
            }
            Ok(g.constant(Tensor::zeros(&empty_shape)))
        }
        1 => Ok(terms[0]),
        _ => Ok(g.add(terms[0], terms[1])?),
    }
}
