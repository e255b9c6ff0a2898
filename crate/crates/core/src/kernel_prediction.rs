//! Networks that turn an aesthetic descriptor into the grouped
//! depthwise-separable kernels and biases of one generator layer.

use aesfa_tensor::{ConvSpec, Float, Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::config::{Frequency, ModelConfig};
use crate::encoders::{DescriptorVars, DESCRIPTOR_SIZE};
use crate::error::{Error, Result};
use crate::layers::ConvLayer;
use crate::params::{Bound, ParamStore};

/// Spatial size of predicted depthwise kernels.
pub const SPATIAL_KERNEL: usize = 3;

/// Predicted kernels for one (layer, frequency): `spatial` is
/// `[batch, C, C/groups, 3, 3]`, `pointwise` is `[batch, C, C/groups, 1, 1]`,
/// `bias` is `[batch, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AestheticKernelSet<T> {
    pub spatial: Tensor<T>,
    pub pointwise: Tensor<T>,
    pub bias: Tensor<T>,
    pub groups: usize,
}

impl<T: Float> AestheticKernelSet<T> {
    pub fn channels(&self) -> usize {
        self.spatial.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph<T>) -> KernelVars {
        KernelVars {
            spatial: g.constant(self.spatial.clone()),
            pointwise: g.constant(self.pointwise.clone()),
            bias: g.constant(self.bias.clone()),
            groups: self.groups,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KernelVars {
    pub spatial: Var,
    pub pointwise: Var,
    pub bias: Var,
    pub groups: usize,
}

impl KernelVars {
    pub fn to_set<T: Float>(self, g: &Graph<T>) -> AestheticKernelSet<T> {
        AestheticKernelSet {
            spatial: g.value(self.spatial).clone(),
            pointwise: g.value(self.pointwise).clone(),
            bias: g.value(self.bias).clone(),
            groups: self.groups,
        }
    }

    pub fn channels<T: Float>(self, g: &Graph<T>) -> usize {
        g.shape(self.spatial)[1]
    }
}

/// One predictor. The spatial head is a same-padded 3x3 convolution over the
/// descriptor; the pointwise and bias heads are affine maps of its global
/// average.
#[derive(Clone, Debug)]
pub struct KernelPredictor {
    channels: usize,
    groups: usize,
    spatial: ConvLayer,
    pointwise: ConvLayer,
    bias: ConvLayer,
}

impl KernelPredictor {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        descriptor: usize,
        channels: usize,
        groups: usize,
    ) -> Self {
        let per_group = channels / groups;
        let k2 = SPATIAL_KERNEL * SPATIAL_KERNEL;
        // Scaled so that predicted kernels start near a variance-preserving
        // magnitude for unit-scale descriptors.
        let spatial_gain = 1.0 / ((per_group * k2).max(1) as f64).sqrt();
        let pointwise_gain = 1.0 / (per_group.max(1) as f64).sqrt();
        let spatial = ConvLayer::new(
            store,
            rng,
            &format!("{name}.spatial"),
            descriptor,
            channels * per_group,
            SPATIAL_KERNEL,
            ConvSpec::same(SPATIAL_KERNEL),
            spatial_gain,
        );
        let one = ConvSpec::new(1, 0, 1);
        let pointwise = ConvLayer::new(
            store,
            rng,
            &format!("{name}.pointwise"),
            descriptor,
            channels * per_group,
            1,
            one,
            pointwise_gain,
        );
        let bias = ConvLayer::new(store, rng, &format!("{name}.bias"), descriptor, channels, 1, one, 0.1);
        KernelPredictor {
            channels,
            groups,
            spatial,
            pointwise,
            bias,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, descriptor: Var) -> Result<KernelVars> {
        let [n, _, h, w] = g.value(descriptor).dims4()?;
        if (h, w) != (DESCRIPTOR_SIZE, DESCRIPTOR_SIZE) {
            return Err(Error::invalid(format!("descriptor must be 3x3, got {h}x{w}")));
        }
        let c = self.channels;
        let per_group = c / self.groups;
        let k = SPATIAL_KERNEL;
        let s = self.spatial.forward(g, p, descriptor)?;
        let spatial = g.reshape(s, &[n, c, per_group, k, k])?;
        let pooled = g.adaptive_avg_pool(descriptor, 1, 1)?;
        let pw = self.pointwise.forward(g, p, pooled)?;
        let pointwise = g.reshape(pw, &[n, c, per_group, 1, 1])?;
        let b = self.bias.forward(g, p, pooled)?;
        let bias = g.reshape(b, &[n, c])?;
        Ok(KernelVars {
            spatial,
            pointwise,
            bias,
            groups: self.groups,
        })
    }
}

/// The six predictors, ordered (1,H), (1,L), (2,H), (2,L), (3,H), (3,L).
#[derive(Clone, Debug)]
pub struct KernelPredictors {
    heads: Vec<KernelPredictor>,
}

/// Position of (layer, frequency) in [`KernelPredictors`] output order.
pub fn kernel_slot(layer: usize, freq: Frequency) -> Result<usize> {
    if !(1..=3).contains(&layer) {
        return Err(Error::invalid(format!("generator layer {layer} not in 1..=3")));
    }
    Ok(2 * (layer - 1) + usize::from(freq == Frequency::Low))
}

impl KernelPredictors {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let mut heads = Vec::with_capacity(6);
        for layer in 1..=3 {
            for f in Frequency::BOTH {
                let c = cfg.kernel_channels(layer, f)?;
                heads.push(KernelPredictor::new(
                    store,
                    rng,
                    &format!("{name}.layer{layer}.{}", f.tag()),
                    cfg.descriptor_channels,
                    c,
                    cfg.groups,
                ));
            }
        }
        Ok(KernelPredictors { heads })
    }

    pub fn predict<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        w: DescriptorVars,
        layer: usize,
        freq: Frequency,
    ) -> Result<KernelVars> {
        let head = &self.heads[kernel_slot(layer, freq)?];
        let branch = match freq {
            Frequency::High => w.high,
            Frequency::Low => w.low,
        };
        head.forward(g, p, branch)
    }

    pub fn predict_all<T: Float>(&self, g: &mut Graph<T>, p: &Bound, w: DescriptorVars) -> Result<Vec<KernelVars>> {
        let mut out = Vec::with_capacity(6);
        for layer in 1..=3 {
            for f in Frequency::BOTH {
                out.push(self.predict(g, p, w, layer, f)?);
            }
        }
        Ok(out)
    }
}
