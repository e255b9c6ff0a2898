//! The full style-transfer network and its inference entry points.

use aesfa_tensor::{Float, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Frequency, ModelConfig};
use crate::encoders::{AestheticDescriptor, DescriptorVars, Encoder};
use crate::error::{Error, Result};
use crate::freq_ops::{OctVar, OctavePair};
use crate::generator::Generator;
use crate::kernel_prediction::{AestheticKernelSet, KernelPredictors, KernelVars};
use crate::params::{Bound, ParamStore};

/// Which of the two encoders to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Content,
    Aesthetic,
}

/// Content encoder, aesthetic encoder, six kernel predictors and the
/// generator, over one parameter store.
#[derive(Clone, Debug)]
pub struct StyleModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    content_encoder: Encoder,
    style_encoder: Encoder,
    predictors: KernelPredictors,
    generator: Generator,
}

impl<T: Float> StyleModel<T> {
    /// Freshly initialised model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let content_encoder = Encoder::new(&mut params, &mut rng, "content_encoder", &config, false)?;
        let style_encoder = Encoder::new(&mut params, &mut rng, "style_encoder", &config, true)?;
        let predictors = KernelPredictors::new(&mut params, &mut rng, "predictors", &config)?;
        let generator = Generator::new(&mut params, &mut rng, "generator", &config)?;
        Ok(StyleModel {
            config,
            params,
            content_encoder,
            style_encoder,
            predictors,
            generator,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn encoder(&self, kind: EncoderKind) -> &Encoder {
        match kind {
            EncoderKind::Content => &self.content_encoder,
            EncoderKind::Aesthetic => &self.style_encoder,
        }
    }

    pub fn predictors(&self) -> &KernelPredictors {
        &self.predictors
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// Content + style images to a stylized image on `g`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, content: Var, style: Var) -> Result<Var> {
        let w = self.style_encoder.describe(g, p, style)?;
        self.forward_with_descriptor(g, p, content, w)
    }

    /// High-frequency style code from `style_high`, low-frequency code from
    /// `style_low`.
    pub fn forward_blend(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        content: Var,
        style_high: Var,
        style_low: Var,
    ) -> Result<Var> {
        let wh = self.style_encoder.describe(g, p, style_high)?;
        let wl = self.style_encoder.describe(g, p, style_low)?;
        let w = DescriptorVars {
            high: wh.high,
            low: wl.low,
        };
        self.forward_with_descriptor(g, p, content, w)
    }

    pub fn forward_with_descriptor(&self, g: &mut Graph<T>, p: &Bound, content: Var, w: DescriptorVars) -> Result<Var> {
        let c = self.content_encoder.encode(g, p, content)?;
        let kernels = self.predictors.predict_all(g, p, w)?;
        self.generator.generate(g, p, c, &kernels)
    }

    fn run<R>(&self, f: impl FnOnce(&mut Graph<T>, &Bound) -> Result<R>) -> Result<R> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        f(&mut g, &p)
    }

    pub fn encode_content(&self, image: &Tensor<T>) -> Result<OctavePair<T>> {
        self.run(|g, p| {
            let x = g.constant(image.clone());
            Ok(self.content_encoder.encode(g, p, x)?.to_pair(g))
        })
    }

    pub fn encode_style(&self, image: &Tensor<T>) -> Result<AestheticDescriptor<T>> {
        self.run(|g, p| {
            let x = g.constant(image.clone());
            let w = self.style_encoder.describe(g, p, x)?;
            Ok(AestheticDescriptor {
                high: g.value(w.high).clone(),
                low: g.value(w.low).clone(),
            })
        })
    }

    pub fn encoder_features(&self, kind: EncoderKind, image: &Tensor<T>) -> Result<Vec<OctavePair<T>>> {
        self.run(|g, p| {
            let x = g.constant(image.clone());
            let feats = self.encoder(kind).features(g, p, x)?;
            Ok(feats.into_iter().map(|f| f.to_pair(g)).collect())
        })
    }

    fn check_descriptor(&self, w: &AestheticDescriptor<T>) -> Result<()> {
        let d = self.config.descriptor_channels;
        let hs = w.high.dims4()?;
        let ls = w.low.dims4()?;
        if hs[1..] != [d, 3, 3] || ls != hs {
            return Err(Error::invalid(format!(
                "descriptor branches {hs:?} / {ls:?}, expected [n, {d}, 3, 3]"
            )));
        }
        Ok(())
    }

    pub fn predict_kernels(
        &self,
        w: &AestheticDescriptor<T>,
        layer: usize,
        freq: Frequency,
    ) -> Result<AestheticKernelSet<T>> {
        self.check_descriptor(w)?;
        self.run(|g, p| {
            let wv = w.bind(g);
            Ok(self.predictors.predict(g, p, wv, layer, freq)?.to_set(g))
        })
    }

    pub fn predict_all(&self, w: &AestheticDescriptor<T>) -> Result<Vec<AestheticKernelSet<T>>> {
        self.check_descriptor(w)?;
        self.run(|g, p| {
            let wv = w.bind(g);
            let ks = self.predictors.predict_all(g, p, wv)?;
            Ok(ks.into_iter().map(|k| k.to_set(g)).collect())
        })
    }

    pub fn generate(&self, content: &OctavePair<T>, kernels: &[AestheticKernelSet<T>]) -> Result<Tensor<T>> {
        self.run(|g, p| {
            let c = OctVar::constant(g, content);
            let ks: Vec<KernelVars> = kernels.iter().map(|k| k.bind(g)).collect();
            let out = self.generator.generate(g, p, c, &ks)?;
            Ok(g.value(out).clone())
        })
    }

    /// Stylizes `content` (sides divisible by 16) with `style`
    /// (sides divisible by 16, at least 48).
    pub fn stylize(&self, content: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(|g, p| {
            let c = g.constant(content.clone());
            let s = g.constant(style.clone());
            let out = self.forward(g, p, c, s)?;
            Ok(g.value(out).clone())
        })
    }

    pub fn stylize_blend(
        &self,
        content: &Tensor<T>,
        style_high: &Tensor<T>,
        style_low: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        self.run(|g, p| {
            let c = g.constant(content.clone());
            let sh = g.constant(style_high.clone());
            let sl = g.constant(style_low.clone());
            let out = self.forward_blend(g, p, c, sh, sl)?;
            Ok(g.value(out).clone())
        })
    }
}
