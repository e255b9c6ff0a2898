//! Parameterised building blocks shared by the encoders, predictors and
//! generator.

use aesfa_tensor::{ConvSpec, Float, Graph, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::freq_ops::{octconv_graph, OctConvParams, OctConvVars, OctVar};
use crate::params::{Bound, ParamId, ParamStore};

/// Gain that preserves activation variance through a leaky ReLU.
pub(crate) fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

/// Plain convolution with an optional bias.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    weight: ParamId,
    bias: Option<ParamId>,
    spec: ConvSpec,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: ConvSpec,
        gain: f64,
    ) -> Self {
        let fan_in = cin / spec.groups * k * k;
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[cout, cin / spec.groups, k, k],
            fan_in,
            gain,
            rng,
        );
        let bias = Some(store.add_zeros(format!("{name}.bias"), &[cout]));
        ConvLayer { weight, bias, spec }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.conv2d(x, p.var(self.weight), self.bias.map(|b| p.var(b)), self.spec)?)
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }
}

/// Octave convolution layer backed by a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct OctConvLayer {
    w_hh: Option<ParamId>,
    w_hl: Option<ParamId>,
    w_lh: Option<ParamId>,
    w_ll: Option<ParamId>,
    b_high: Option<ParamId>,
    b_low: Option<ParamId>,
    stride: usize,
    padding: usize,
    depthwise: bool,
    out_channels: (usize, usize),
}

impl OctConvLayer {
    /// Dense four-path layer. Every path is initialised as if the layer were
    /// one convolution over all `in_ch.0 + in_ch.1` input channels.
    #[allow(clippy::too_many_arguments)]
    pub fn dense<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: (usize, usize),
        out_ch: (usize, usize),
        k: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let fan_in = (in_ch.0 + in_ch.1) * k * k;
        let mut path = |tag: &str, cin: usize, cout: usize| {
            (cin > 0 && cout > 0)
                .then(|| store.add_uniform(format!("{name}.{tag}"), &[cout, cin, k, k], fan_in, gain, rng))
        };
        let w_hh = path("w_hh", in_ch.0, out_ch.0);
        let w_hl = path("w_hl", in_ch.0, out_ch.1);
        let w_lh = path("w_lh", in_ch.1, out_ch.0);
        let w_ll = path("w_ll", in_ch.1, out_ch.1);
        let b_high = (out_ch.0 > 0).then(|| store.add_zeros(format!("{name}.b_high"), &[out_ch.0]));
        let b_low = (out_ch.1 > 0).then(|| store.add_zeros(format!("{name}.b_low"), &[out_ch.1]));
        OctConvLayer {
            w_hh,
            w_hl,
            w_lh,
            w_ll,
            b_high,
            b_low,
            stride,
            padding: k / 2,
            depthwise: false,
            out_channels: out_ch,
        }
    }

    /// Per-channel spatial filtering of each branch, no cross-frequency paths.
    pub fn depthwise<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        ch: (usize, usize),
        k: usize,
        stride: usize,
    ) -> Self {
        let mut path = |tag: &str, c: usize| {
            (c > 0).then(|| store.add_uniform(format!("{name}.{tag}"), &[c, 1, k, k], k * k, 1.0, rng))
        };
        let w_hh = path("w_hh", ch.0);
        let w_ll = path("w_ll", ch.1);
        let b_high = (ch.0 > 0).then(|| store.add_zeros(format!("{name}.b_high"), &[ch.0]));
        let b_low = (ch.1 > 0).then(|| store.add_zeros(format!("{name}.b_low"), &[ch.1]));
        OctConvLayer {
            w_hh,
            w_hl: None,
            w_lh: None,
            w_ll,
            b_high,
            b_low,
            stride,
            padding: k / 2,
            depthwise: true,
            out_channels: ch,
        }
    }

    pub fn vars(&self, p: &Bound) -> OctConvVars {
        let v = |id: Option<ParamId>| id.map(|id| p.var(id));
        OctConvVars {
            w_hh: v(self.w_hh),
            w_hl: v(self.w_hl),
            w_lh: v(self.w_lh),
            w_ll: v(self.w_ll),
            b_high: v(self.b_high),
            b_low: v(self.b_low),
            stride: self.stride,
            padding: self.padding,
            depthwise: self.depthwise,
            out_channels: self.out_channels,
        }
    }

    /// Snapshot of the current weights.
    pub fn params<T: Float>(&self, store: &ParamStore<T>) -> OctConvParams<T> {
        let t = |id: Option<ParamId>| id.map(|id| store.get(id).clone());
        OctConvParams {
            w_hh: t(self.w_hh),
            w_hl: t(self.w_hl),
            w_lh: t(self.w_lh),
            w_ll: t(self.w_ll),
            b_high: t(self.b_high),
            b_low: t(self.b_low),
            stride: self.stride,
            padding: self.padding,
            depthwise: self.depthwise,
            out_channels: self.out_channels,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: OctVar) -> Result<OctVar> {
        octconv_graph(g, x, &self.vars(p))
    }

    pub fn out_channels(&self) -> (usize, usize) {
        self.out_channels
    }
}
