//! Frozen perceptual feature pyramid used by the losses.
//!
//! The layer layout follows VGG-19 up to `conv4_1`; the four returned stages
//! are the post-ReLU activations of `conv1_1`, `conv2_1`, `conv3_1` and
//! `conv4_1`. Widths are configurable so that a small randomly initialised
//! surrogate with the same topology can stand in for the pretrained network.

use std::path::Path;
use std::sync::Arc;

use aesfa_tensor::{ConvSpec, Float, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor};
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
pub const VGG19_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const STAGES: usize = 4;
const KIND: &str = "perceptual_extractor";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Item {
    /// Convolution name and the width index of its output.
    Conv(&'static str, usize),
    Pool,
}

const LAYOUT: [&[Item]; STAGES] = [
    &[Item::Conv("conv1_1", 0)],
    &[Item::Conv("conv1_2", 0), Item::Pool, Item::Conv("conv2_1", 1)],
    &[Item::Conv("conv2_2", 1), Item::Pool, Item::Conv("conv3_1", 2)],
    &[
        Item::Conv("conv3_2", 2),
        Item::Conv("conv3_3", 2),
        Item::Conv("conv3_4", 2),
        Item::Pool,
        Item::Conv("conv4_1", 3),
    ],
];

/// Names of the convolutions in checkpoint order.
pub fn conv_names() -> impl Iterator<Item = &'static str> {
    LAYOUT.iter().flat_map(|s| s.iter()).filter_map(|i| match i {
        Item::Conv(n, _) => Some(*n),
        Item::Pool => None,
    })
}

#[derive(Clone, Debug)]
struct Conv<T> {
    weight: Arc<Tensor<T>>,
    bias: Arc<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct PerceptualExtractor<T> {
    convs: Vec<Conv<T>>,
    widths: [usize; 4],
    normalize: bool,
}

impl<T: Float> PerceptualExtractor<T> {
    /// Randomly initialised network with the VGG-19 topology and the given
    /// stage widths. No input normalisation.
    pub fn surrogate(widths: [usize; 4], seed: u64) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::invalid(format!("extractor widths {widths:?} must be positive")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<T>::new();
        let mut cin = 3;
        let mut convs = Vec::new();
        for name in conv_names() {
            let cout = widths[width_index(name)];
            let w = store.add_uniform(name, &[cout, cin, 3, 3], cin * 9, 2f64.sqrt(), &mut rng);
            convs.push(Conv {
                weight: Arc::new(store.get(w).clone()),
                bias: Arc::new(Tensor::zeros(&[cout])),
            });
            cin = cout;
        }
        Ok(PerceptualExtractor {
            convs,
            widths,
            normalize: false,
        })
    }

    /// Builds from `<conv>.weight` / `<conv>.bias` tensors; widths are read
    /// off the shapes.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>, path: &Path) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message: m,
        };
        if ckpt.metadata.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(bad(format!("not a {KIND} checkpoint")));
        }
        let normalize = ckpt
            .metadata
            .get("input_normalization")
            .and_then(|v| v.as_str())
            .map(|v| v == "imagenet")
            .unwrap_or(false);
        let mut widths = [0usize; 4];
        let mut cin = 3;
        let mut convs = Vec::new();
        for name in conv_names() {
            let wname = format!("{name}.weight");
            let bname = format!("{name}.bias");
            let w = ckpt.param(&wname).ok_or_else(|| bad(format!("missing {wname}")))?;
            let b = ckpt.param(&bname).ok_or_else(|| bad(format!("missing {bname}")))?;
            let s = w.shape();
            if s.len() != 4 || s[1] != cin || s[2] != 3 || s[3] != 3 || b.shape() != [s[0]] {
                return Err(bad(format!(
                    "{name}: weight {s:?} / bias {:?} do not fit input width {cin}",
                    b.shape()
                )));
            }
            let wi = width_index(name);
            if widths[wi] != 0 && widths[wi] != s[0] {
                return Err(bad(format!("{name}: width {} disagrees with {}", s[0], widths[wi])));
            }
            widths[wi] = s[0];
            cin = s[0];
            convs.push(Conv {
                weight: Arc::new(w.clone()),
                bias: Arc::new(b.clone()),
            });
        }
        Ok(PerceptualExtractor {
            convs,
            widths,
            normalize,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint::<T>(path)?;
        Self::from_checkpoint(&ckpt, path)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut params = Vec::new();
        for (name, c) in conv_names().zip(&self.convs) {
            params.push(NamedTensor::new(format!("{name}.weight"), (*c.weight).clone()));
            params.push(NamedTensor::new(format!("{name}.bias"), (*c.bias).clone()));
        }
        Checkpoint {
            params,
            optimizer: Vec::new(),
            metadata: json!({
                "kind": KIND,
                "input_normalization": if self.normalize { "imagenet" } else { "none" },
            }),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.to_checkpoint(), path)
    }

    /// Enables or disables ImageNet mean/std input normalisation.
    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn normalizes_input(&self) -> bool {
        self.normalize
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    /// Weights and biases in layer order, for frozen-ness checks.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.convs.iter().flat_map(|c| [c.weight.as_ref(), c.bias.as_ref()])
    }

    /// Stage activations for `image` (`[n, 3, h, w]`, sides divisible by 8).
    /// Weights enter `g` as constants, so no gradient reaches them.
    pub fn features_graph(&self, g: &mut Graph<T>, image: Var) -> Result<Vec<Var>> {
        let [_, c, h, w] = g.value(image).dims4()?;
        if c != 3 {
            return Err(Error::invalid(format!("extractor expects 3 channels, got {c}")));
        }
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "extractor input {h}x{w} must have sides divisible by 8"
            )));
        }
        let mut x = image;
        if self.normalize {
            let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 1.0 / s).collect();
            let shift: Vec<f64> = IMAGENET_MEAN.iter().zip(&IMAGENET_STD).map(|(m, s)| -m / s).collect();
            x = g.channel_affine(x, &scale, &shift)?;
        }
        let mut convs = self.convs.iter();
        let mut out = Vec::with_capacity(STAGES);
        for stage in LAYOUT {
            for item in stage {
                x = match item {
                    Item::Conv(..) => {
                        let c = convs.next().expect("layout and weights agree");
                        let w = g.constant_shared(Arc::clone(&c.weight));
                        let b = g.constant_shared(Arc::clone(&c.bias));
                        let y = g.conv2d(x, w, Some(b), ConvSpec::same(3))?;
                        g.relu(y)
                    }
                    Item::Pool => g.max_pool2(x)?,
                };
            }
            out.push(x);
        }
        Ok(out)
    }

    pub fn features(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let fs = self.features_graph(&mut g, x)?;
        Ok(fs.into_iter().map(|f| g.value(f).clone()).collect())
    }
}

fn width_index(name: &str) -> usize {
    LAYOUT
        .iter()
        .flat_map(|s| s.iter())
        .find_map(|i| match i {
            Item::Conv(n, w) if *n == name => Some(*w),
            _ => None,
        })
        .expect("known layer")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_resolutions_halve() {
        let ext = PerceptualExtractor::<f32>::surrogate([4, 6, 8, 10], 1).unwrap();
        let img = Tensor::from_fn(&[2, 3, 32, 24], |i| (i % 17) as f32 / 17.0);
        let fs = ext.features(&img).unwrap();
        let shapes: Vec<_> = fs.iter().map(|f| f.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![2, 4, 32, 24],
                vec![2, 6, 16, 12],
                vec![2, 8, 8, 6],
                vec![2, 10, 4, 3]
            ]
        );
    }

    #[test]
    fn vgg_layer_count() {
        assert_eq!(conv_names().count(), 9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ext = PerceptualExtractor::<f32>::surrogate([4, 6, 8, 10], 3)
            .unwrap()
            .with_normalization(true);
        let back = PerceptualExtractor::from_checkpoint(&ext.to_checkpoint(), Path::new("m")).unwrap();
        assert_eq!(back.widths(), [4, 6, 8, 10]);
        assert!(back.normalizes_input());
        assert!(ext.tensors().zip(back.tensors()).all(|(a, b)| a == b));
    }

    #[test]
    fn rejects_odd_sides() {
        let ext = PerceptualExtractor::<f32>::surrogate([2, 2, 2, 2], 0).unwrap();
        assert!(ext.features(&Tensor::zeros(&[1, 3, 20, 16])).is_err());
    }
}
