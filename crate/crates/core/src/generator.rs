//! Decoder: three AdaOct + OctConv layers with 2x upsampling, then per-branch
//! RGB projections merged by upsample-and-add.

use aesfa_tensor::{ConvSpec, Float, Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::freq_ops::{octconv_graph, OctConvParams, OctConvVars, OctVar, OctavePair};
use crate::kernel_prediction::{AestheticKernelSet, KernelVars, SPATIAL_KERNEL};
use crate::layers::{leaky_gain, ConvLayer, OctConvLayer};
use crate::params::{Bound, ParamStore};

#[derive(Clone, Debug)]
pub struct Generator {
    mixes: Vec<OctConvLayer>,
    to_rgb_high: ConvLayer,
    to_rgb_low: ConvLayer,
}

/// Grouped depthwise-separable convolution of one branch with predicted
/// kernels: 3x3 grouped spatial, then 1x1 grouped pointwise plus bias.
pub fn apply_predicted<T: Float>(g: &mut Graph<T>, x: Var, k: &KernelVars) -> Result<Var> {
    let [n, c, _, _] = g.value(x).dims4()?;
    let kc = k.channels(g);
    if kc != c {
        return Err(Error::invalid(format!(
            "predicted kernels cover {kc} channels, branch has {c}"
        )));
    }
    if g.shape(k.spatial)[0] != n {
        return Err(Error::invalid(format!(
            "predicted kernels have batch {}, features have {n}",
            g.shape(k.spatial)[0]
        )));
    }
    if c == 0 {
        return Ok(x);
    }
    if k.groups == 0 || c % k.groups != 0 {
        return Err(Error::invalid(format!(
            "{} groups do not divide {c} channels",
            k.groups
        )));
    }
    let s = g.conv2d_per_sample(x, k.spatial, None, ConvSpec::new(1, SPATIAL_KERNEL / 2, k.groups))?;
    Ok(g.conv2d_per_sample(s, k.pointwise, Some(k.bias), ConvSpec::new(1, 0, k.groups))?)
}

/// AdaOct followed by the style-independent octave convolution `mix`.
pub fn adaoct_graph<T: Float>(
    g: &mut Graph<T>,
    x: OctVar,
    k_high: &KernelVars,
    k_low: &KernelVars,
    mix: &OctConvVars,
) -> Result<OctVar> {
    if k_high.groups != k_low.groups {
        return Err(Error::invalid(format!(
            "kernel groups differ between branches: {} vs {}",
            k_high.groups, k_low.groups
        )));
    }
    x.check(g)?;
    let styled = OctVar {
        high: apply_predicted(g, x.high, k_high)?,
        low: apply_predicted(g, x.low, k_low)?,
    };
    octconv_graph(g, styled, mix)
}

/// Value-level AdaOct.
pub fn adaoct_apply<T: Float>(
    x: &OctavePair<T>,
    k_high: &AestheticKernelSet<T>,
    k_low: &AestheticKernelSet<T>,
    mix: &OctConvParams<T>,
) -> Result<OctavePair<T>> {
    let mut g = Graph::new();
    let xv = OctVar::constant(&mut g, x);
    let (kh, kl) = (k_high.bind(&mut g), k_low.bind(&mut g));
    let m = mix.bind(&mut g);
    Ok(adaoct_graph(&mut g, xv, &kh, &kl, &m)?.to_pair(&g))
}

/// `clamp(high + upsample2(low), 0, 1)`.
pub fn merge_graph<T: Float>(g: &mut Graph<T>, rgb_high: Var, rgb_low: Var) -> Result<Var> {
    let [n, c, h, w] = g.value(rgb_high).dims4()?;
    let low = g.value(rgb_low).dims4()?;
    if low != [n, c, h / 2, w / 2] || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "low image {low:?} is not half of high image {:?}",
            [n, c, h, w]
        )));
    }
    let up = g.upsample2(rgb_low)?;
    let sum = g.add(rgb_high, up)?;
    Ok(g.clamp(sum, 0.0, 1.0))
}

pub fn merge_frequencies<T: Float>(rgb_high: &Tensor<T>, rgb_low: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let h = g.constant(rgb_high.clone());
    let l = g.constant(rgb_low.clone());
    let out = merge_graph(&mut g, h, l)?;
    Ok(g.value(out).clone())
}

impl Generator {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let widths = cfg.generator_widths;
        let mut mixes = Vec::with_capacity(3);
        for layer in 1..=3 {
            mixes.push(OctConvLayer::dense(
                store,
                rng,
                &format!("{name}.layer{layer}.mix"),
                cfg.split(widths[layer - 1])?,
                cfg.split(widths[layer])?,
                3,
                1,
                leaky_gain(LEAKY_SLOPE),
            ));
        }
        let (ch, cl) = cfg.split(widths[3])?;
        let spec = ConvSpec::same(3);
        let to_rgb_high = ConvLayer::new(store, rng, &format!("{name}.to_rgb.high"), ch, 3, 3, spec, 1.0);
        let to_rgb_low = ConvLayer::new(store, rng, &format!("{name}.to_rgb.low"), cl, 3, 3, spec, 1.0);
        Ok(Generator {
            mixes,
            to_rgb_high,
            to_rgb_low,
        })
    }

    pub fn mix(&self, layer: usize) -> &OctConvLayer {
        &self.mixes[layer - 1]
    }

    /// One generator layer: AdaOct, mix, leaky ReLU, 2x upsampling.
    pub fn layer<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        layer: usize,
        x: OctVar,
        k_high: &KernelVars,
        k_low: &KernelVars,
    ) -> Result<OctVar> {
        let mix = self.mixes[layer - 1].vars(p);
        adaoct_graph(g, x, k_high, k_low, &mix)?
            .leaky_relu(g, LEAKY_SLOPE)
            .upsample2(g)
    }

    /// Stylized image in `[0, 1]`, at 8x the content feature resolution.
    pub fn generate<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        content: OctVar,
        kernels: &[KernelVars],
    ) -> Result<Var> {
        if kernels.len() != 6 {
            return Err(Error::invalid(format!("expected 6 kernel sets, got {}", kernels.len())));
        }
        let n = g.shape(content.high)[0];
        for k in kernels {
            if g.shape(k.spatial)[0] != n {
                return Err(Error::invalid(format!(
                    "content batch {n} does not match kernel batch {}",
                    g.shape(k.spatial)[0]
                )));
            }
        }
        let mut x = content;
        for layer in 1..=3 {
            x = self.layer(g, p, layer, x, &kernels[2 * layer - 2], &kernels[2 * layer - 1])?;
        }
        let rh = self.to_rgb_high.forward(g, p, x.high)?;
        let rl = self.to_rgb_low.forward(g, p, x.low)?;
        merge_graph(g, rh, rl)
    }
}
