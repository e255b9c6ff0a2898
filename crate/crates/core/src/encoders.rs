//! Content and aesthetic encoders: an octave stem followed by three
//! depthwise-separable octave blocks, each halving both branches.

use aesfa_tensor::{ConvSpec, Float, Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::freq_ops::OctVar;
use crate::layers::{leaky_gain, ConvLayer, OctConvLayer};
use crate::params::{Bound, ParamStore};

/// Spatial size of each descriptor branch.
pub const DESCRIPTOR_SIZE: usize = 3;
/// Smallest style side the descriptor head accepts.
pub const MIN_STYLE_SIDE: usize = 48;
/// Content sides must be a multiple of this.
pub const SIZE_MULTIPLE: usize = 16;

#[derive(Clone, Debug)]
struct SeparableBlock {
    depthwise: OctConvLayer,
    pointwise: OctConvLayer,
}

/// Adaptive 3x3 pooling then a 1x1 projection, per branch.
#[derive(Clone, Debug)]
struct DescriptorHead {
    high: ConvLayer,
    low: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stem: OctConvLayer,
    blocks: Vec<SeparableBlock>,
    head: Option<DescriptorHead>,
}

/// Graph handles of an aesthetic descriptor.
#[derive(Clone, Copy, Debug)]
pub struct DescriptorVars {
    pub high: Var,
    pub low: Var,
}

/// Per-frequency style code, `[batch, D, 3, 3]` per branch.
#[derive(Clone, Debug, PartialEq)]
pub struct AestheticDescriptor<T> {
    pub high: Tensor<T>,
    pub low: Tensor<T>,
}

impl<T: Float> AestheticDescriptor<T> {
    pub fn bind(&self, g: &mut Graph<T>) -> DescriptorVars {
        DescriptorVars {
            high: g.constant(self.high.clone()),
            low: g.constant(self.low.clone()),
        }
    }
}

impl Encoder {
    /// `with_head` adds the descriptor projection (aesthetic encoder only).
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
        with_head: bool,
    ) -> Result<Self> {
        let gain = leaky_gain(LEAKY_SLOPE);
        let widths = cfg.encoder_widths;
        let stem = OctConvLayer::dense(
            store,
            rng,
            &format!("{name}.stem"),
            (3, 0),
            cfg.split(widths[0])?,
            3,
            1,
            gain,
        );
        let mut blocks = Vec::with_capacity(3);
        for i in 1..4 {
            let cin = cfg.split(widths[i - 1])?;
            let cout = cfg.split(widths[i])?;
            let depthwise = OctConvLayer::depthwise(store, rng, &format!("{name}.block{i}.depthwise"), cin, 3, 2);
            let pointwise =
                OctConvLayer::dense(store, rng, &format!("{name}.block{i}.pointwise"), cin, cout, 1, 1, gain);
            blocks.push(SeparableBlock { depthwise, pointwise });
        }
        let head = with_head
            .then(|| -> Result<DescriptorHead> {
                let (ch, cl) = cfg.split(widths[3])?;
                let d = cfg.descriptor_channels;
                let spec = ConvSpec::new(1, 0, 1);
                Ok(DescriptorHead {
                    high: ConvLayer::new(store, rng, &format!("{name}.head.high"), ch, d, 1, spec, 1.0),
                    low: ConvLayer::new(store, rng, &format!("{name}.head.low"), cl, d, 1, spec, 1.0),
                })
            })
            .transpose()?;
        Ok(Encoder { stem, blocks, head })
    }

    /// Activations after the stem and after every block, in forward order.
    pub fn features<T: Float>(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<Vec<OctVar>> {
        let [n, c, h, w] = g.value(image).dims4()?;
        check_content_dims(c, h, w)?;
        let empty_low = g.constant(Tensor::zeros(&[n, 0, h / 2, w / 2]));
        let mut x = OctVar {
            high: image,
            low: empty_low,
        };
        let mut out = Vec::with_capacity(1 + self.blocks.len());
        x = self.stem.forward(g, p, x)?.leaky_relu(g, LEAKY_SLOPE);
        out.push(x);
        for block in &self.blocks {
            x = block.depthwise.forward(g, p, x)?;
            x = block.pointwise.forward(g, p, x)?.leaky_relu(g, LEAKY_SLOPE);
            out.push(x);
        }
        Ok(out)
    }

    /// Final octave features.
    pub fn encode<T: Float>(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<OctVar> {
        let feats = self.features(g, p, image)?;
        Ok(*feats.last().expect("encoder has blocks"))
    }

    pub fn describe<T: Float>(&self, g: &mut Graph<T>, p: &Bound, image: Var) -> Result<DescriptorVars> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::invalid("encoder has no descriptor head"))?;
        let [_, _, h, w] = g.value(image).dims4()?;
        if h < MIN_STYLE_SIDE || w < MIN_STYLE_SIDE {
            return Err(Error::invalid(format!(
                "style image {h}x{w} is smaller than {MIN_STYLE_SIDE}x{MIN_STYLE_SIDE}"
            )));
        }
        let x = self.encode(g, p, image)?;
        let ph = g.adaptive_avg_pool(x.high, DESCRIPTOR_SIZE, DESCRIPTOR_SIZE)?;
        let pl = g.adaptive_avg_pool(x.low, DESCRIPTOR_SIZE, DESCRIPTOR_SIZE)?;
        Ok(DescriptorVars {
            high: head.high.forward(g, p, ph)?,
            low: head.low.forward(g, p, pl)?,
        })
    }
}

pub(crate) fn check_content_dims(c: usize, h: usize, w: usize) -> Result<()> {
    if c != 3 {
        return Err(Error::invalid(format!("expected an RGB image, got {c} channels")));
    }
    if h == 0 || w == 0 || !h.is_multiple_of(SIZE_MULTIPLE) || !w.is_multiple_of(SIZE_MULTIPLE) {
        return Err(Error::invalid(format!(
            "image {h}x{w} must have sides divisible by {SIZE_MULTIPLE}"
        )));
    }
    Ok(())
}
