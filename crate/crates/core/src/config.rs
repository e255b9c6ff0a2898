use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq_ops::split_alpha;

/// Negative slope of every leaky ReLU in the encoders and generator.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Branch selector for per-frequency components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frequency {
    High,
    Low,
}

impl Frequency {
    pub const BOTH: [Frequency; 2] = [Frequency::High, Frequency::Low];

    pub fn tag(self) -> &'static str {
        match self {
            Frequency::High => "high",
            Frequency::Low => "low",
        }
    }
}

/// Architecture hyper-parameters. The defaults are the production plan; the
/// scaled constructors keep the topology and shrink every width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Fraction of channels routed to the low-frequency branch.
    pub alpha: f64,
    /// Channel groups of the predicted kernels (same for every layer and
    /// frequency).
    pub groups: usize,
    /// Output widths of the stem and of the three separable blocks.
    pub encoder_widths: [usize; 4],
    /// Channels of each aesthetic descriptor branch.
    pub descriptor_channels: usize,
    /// Generator widths: input of layer 1, then outputs of layers 1..3.
    pub generator_widths: [usize; 4],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            alpha: 0.5,
            groups: 8,
            encoder_widths: [64, 128, 256, 256],
            descriptor_channels: 256,
            generator_widths: [256, 128, 64, 32],
        }
    }
}

impl ModelConfig {
    /// Every width divided by `divisor`.
    pub fn scaled(divisor: usize) -> Self {
        let d = divisor.max(1);
        let base = ModelConfig::default();
        ModelConfig {
            encoder_widths: base.encoder_widths.map(|w| (w / d).max(1)),
            descriptor_channels: (base.descriptor_channels / d).max(1),
            generator_widths: base.generator_widths.map(|w| (w / d).max(1)),
            ..base
        }
    }

    /// Four channels everywhere; used for float64 gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            alpha: 0.5,
            groups: 1,
            encoder_widths: [4, 4, 4, 4],
            descriptor_channels: 4,
            generator_widths: [4, 4, 4, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.groups == 0 || self.descriptor_channels == 0 {
            return Err(Error::invalid("groups and descriptor channels must be positive"));
        }
        if self.encoder_widths.contains(&0) || self.generator_widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.generator_widths[0] != self.encoder_widths[3] {
            return Err(Error::invalid(format!(
                "generator input width {} differs from content width {}",
                self.generator_widths[0], self.encoder_widths[3]
            )));
        }
        for layer in 1..=3 {
            for f in Frequency::BOTH {
                let c = self.kernel_channels(layer, f)?;
                if c % self.groups != 0 {
                    return Err(Error::invalid(format!(
                        "groups {} do not divide {c} {} channels of generator layer {layer}",
                        self.groups,
                        f.tag()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, width: usize) -> Result<(usize, usize)> {
        split_alpha(width, self.alpha)
    }

    /// Channels `C` of the predicted kernels for generator `layer` (1..=3).
    pub fn kernel_channels(&self, layer: usize, freq: Frequency) -> Result<usize> {
        if !(1..=3).contains(&layer) {
            return Err(Error::invalid(format!("generator layer {layer} not in 1..=3")));
        }
        let (h, l) = self.split(self.generator_widths[layer - 1])?;
        Ok(match freq {
            Frequency::High => h,
            Frequency::Low => l,
        })
    }
}
