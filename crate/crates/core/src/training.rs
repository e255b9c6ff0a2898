//! Optimisation loop, Adam, and model checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aesfa_tensor::{Float, Graph, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor};
use crate::config::ModelConfig;
use crate::data::{derive_seed, AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::extractor::PerceptualExtractor;
use crate::losses::{loss_terms, LossTargets, LossWeights};
use crate::model::StyleModel;
use crate::params::ParamStore;

pub const MODEL_KIND: &str = "style_model";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
/// Stage widths of the random extractor used when no pretrained weights are
/// supplied.
pub const SURROGATE_WIDTHS: [usize; 4] = [16, 32, 64, 128];

pub fn checkpoint_name(iteration: u64) -> String {
    format!("checkpoint_{iteration:08}.ckpt")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub content_dir: PathBuf,
    pub style_dir: PathBuf,
    pub out_dir: PathBuf,
    pub iterations: u64,
    pub batch: usize,
    pub lr: f64,
    pub alpha: f64,
    pub n_g: usize,
    pub k: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub resize: u32,
    pub crop: u32,
    /// Every network width is divided by this (1 = full size).
    pub width_divisor: usize,
    /// Pretrained extractor checkpoint; a seeded random surrogate is used
    /// when absent.
    pub extractor: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        TrainConfig {
            content_dir: PathBuf::new(),
            style_dir: PathBuf::new(),
            out_dir: PathBuf::from("runs"),
            iterations: 160_000,
            batch: 8,
            lr: 1e-4,
            alpha: 0.5,
            n_g: 8,
            k: 1,
            loss_weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 10_000,
            resize: aug.resize,
            crop: aug.crop,
            width_divisor: 1,
            extractor: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.iterations == 0 || self.batch == 0 || self.n_g == 0 || self.k == 0 || self.checkpoint_every == 0 {
            return bad("iterations, batch, n_g, k and checkpoint_every must be positive".into());
        }
        if self.batch < 2 {
            return bad(format!(
                "batch {} leaves no contrastive negatives (need at least 2)",
                self.batch
            ));
        }
        if self.k >= self.batch {
            return bad(format!("k {} must be smaller than batch {}", self.k, self.batch));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.width_divisor == 0 {
            return bad("width_divisor must be positive".into());
        }
        if !self.crop.is_multiple_of(16) || self.crop < 48 {
            return bad(format!("crop {} must be a multiple of 16 and at least 48", self.crop));
        }
        self.loss_weights.validate()?;
        self.augment().validate().map_err(|e| Error::invalid(e.to_string()))?;
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            alpha: self.alpha,
            groups: self.n_g,
            ..ModelConfig::scaled(self.width_divisor)
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            resize: self.resize,
            crop: self.crop,
        }
    }
}

/// Adam with constant learning rate and bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update; `grads[i]` belongs to parameter `i`, `None` meaning zero.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} gradients / {} moments for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (lr, eps) = (T::from_f64_lossy(self.lr), T::from_f64_lossy(self.eps));
        let one = T::one();
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            match &grads[i] {
                Some(gr) => {
                    if gr.shape() != params.get(id).shape() {
                        return Err(Error::invalid(format!(
                            "gradient shape mismatch for {}",
                            params.name(id)
                        )));
                    }
                    let p = params.get_mut(id).data_mut();
                    for j in 0..p.len() {
                        let gj = gr.data()[j];
                        m[j] = b1 * m[j] + (one - b1) * gj;
                        v[j] = b2 * v[j] + (one - b2) * gj * gj;
                        p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
                None => {
                    // Zero gradient: moments decay, parameters move only by
                    // whatever momentum is left.
                    if m.iter().all(|x| x.is_zero()) {
                        continue;
                    }
                    let p = params.get_mut(id).data_mut();
                    for j in 0..p.len() {
                        m[j] = b1 * m[j];
                        v[j] = b2 * v[j];
                        p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    fn state_tensors(&self, params: &ParamStore<T>) -> Vec<NamedTensor<T>> {
        let names: Vec<&str> = params.iter().map(|(n, _)| n).collect();
        let m = names
            .iter()
            .zip(&self.m)
            .map(|(n, t)| NamedTensor::new(format!("adam.m.{n}"), t.clone()));
        let v = names
            .iter()
            .zip(&self.v)
            .map(|(n, t)| NamedTensor::new(format!("adam.v.{n}"), t.clone()));
        m.chain(v).collect()
    }

    fn from_state(params: &ParamStore<T>, state: &[NamedTensor<T>], lr: f64, step: u64, path: &Path) -> Result<Self> {
        let n = params.len();
        if state.len() != 2 * n {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("{} optimizer tensors for {n} parameters", state.len()),
            });
        }
        let mut adam = Adam::new(params, lr);
        adam.step = step;
        for (i, (name, t)) in params.iter().enumerate() {
            for (slot, prefix, store) in [(i, "m", &mut adam.m), (n + i, "v", &mut adam.v)] {
                let e = &state[slot];
                if e.name != format!("adam.{prefix}.{name}") || e.tensor.shape() != t.shape() {
                    return Err(Error::Checkpoint {
                        path: path.to_path_buf(),
                        message: format!("optimizer entry {} does not match parameter {name}", e.name),
                    });
                }
                store[i] = e.tensor.clone();
            }
        }
        Ok(adam)
    }
}

/// Losses of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub content: f64,
    pub style: f64,
    pub aes: f64,
    pub total: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    pub content: f64,
    pub style: f64,
    pub aes: f64,
    pub total: f64,
    pub wall_time: f64,
}

/// Forward, losses, backward and an Adam update on one batch.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Float>(
    model: &mut StyleModel<T>,
    adam: &mut Adam<T>,
    ext: &PerceptualExtractor<T>,
    content: &Tensor<T>,
    style: &Tensor<T>,
    weights: &LossWeights,
    k: usize,
    iteration: u64,
) -> Result<LossReport> {
    let targets = LossTargets::prepare(model, ext, content, style)?;
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, true);
    let c = g.constant(content.clone());
    let s = g.constant(style.clone());
    let out = model.forward(&mut g, &p, c, s)?;
    let terms = loss_terms(&mut g, model, &p, out, &targets, ext, weights, k)?;
    let report = LossReport {
        content: g.scalar(terms.content).to_f64_lossy(),
        style: g.scalar(terms.style).to_f64_lossy(),
        aes: g.scalar(terms.aes).to_f64_lossy(),
        total: g.scalar(terms.total).to_f64_lossy(),
    };
    for (term, v) in [
        ("content", report.content),
        ("style", report.style),
        ("aesthetic contrastive", report.aes),
        ("total", report.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term, iteration });
        }
    }
    let mut grads = g.backward(terms.total)?;
    let per_param: Vec<Option<Tensor<T>>> = p.vars().iter().map(|&v| grads.take(v)).collect();
    drop(g);
    adam.update(model.params_mut(), &per_param)?;
    Ok(report)
}

/// Model weights, optimizer state and run metadata.
pub fn model_checkpoint<T: Float>(
    model: &StyleModel<T>,
    adam: Option<&Adam<T>>,
    train: Option<&TrainConfig>,
    iteration: u64,
) -> Checkpoint<T> {
    let params = model
        .params()
        .iter()
        .map(|(n, t)| NamedTensor::new(n, t.clone()))
        .collect();
    Checkpoint {
        params,
        optimizer: adam.map(|a| a.state_tensors(model.params())).unwrap_or_default(),
        metadata: json!({
            "kind": MODEL_KIND,
            "model_config": model.config(),
            "train_config": train,
            "iteration": iteration,
            "adam_step": adam.map(|a| a.step),
        }),
    }
}

pub fn save_model<T: Float>(
    path: &Path,
    model: &StyleModel<T>,
    adam: Option<&Adam<T>>,
    train: Option<&TrainConfig>,
    iteration: u64,
) -> Result<()> {
    save_checkpoint(&model_checkpoint(model, adam, train, iteration), path)
}

/// A model restored from a checkpoint, with whatever training state it
/// carried.
#[derive(Clone, Debug)]
pub struct LoadedModel<T> {
    pub model: StyleModel<T>,
    pub adam: Option<Adam<T>>,
    pub train_config: Option<TrainConfig>,
    pub iteration: u64,
}

pub fn model_from_checkpoint<T: Float>(ckpt: &Checkpoint<T>, path: &Path) -> Result<LoadedModel<T>> {
    let bad = |m: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message: m,
    };
    let meta = &ckpt.metadata;
    if meta.get("kind").and_then(|k| k.as_str()) != Some(MODEL_KIND) {
        return Err(bad(format!("not a {MODEL_KIND} checkpoint")));
    }
    let config: ModelConfig =
        serde_json::from_value(meta["model_config"].clone()).map_err(|e| bad(format!("model_config: {e}")))?;
    let train_config: Option<TrainConfig> =
        serde_json::from_value(meta["train_config"].clone()).map_err(|e| bad(format!("train_config: {e}")))?;
    let iteration = meta["iteration"].as_u64().unwrap_or(0);
    let mut model = StyleModel::new(config, 0).map_err(|e| bad(e.to_string()))?;
    if ckpt.params.len() != model.params().len() {
        return Err(bad(format!(
            "{} parameters stored, model has {}",
            ckpt.params.len(),
            model.params().len()
        )));
    }
    let ids: Vec<_> = model.params().ids().collect();
    for (id, stored) in ids.into_iter().zip(&ckpt.params) {
        let live = model.params().get(id);
        if model.params().name(id) != stored.name || live.shape() != stored.tensor.shape() {
            return Err(bad(format!(
                "parameter {} {:?} does not match model parameter {} {:?}",
                stored.name,
                stored.tensor.shape(),
                model.params().name(id),
                live.shape()
            )));
        }
        *model.params_mut().get_mut(id) = stored.tensor.clone();
    }
    let adam = match (meta["adam_step"].as_u64(), ckpt.optimizer.is_empty()) {
        (Some(step), false) => {
            let lr = train_config.as_ref().map_or(1e-4, |c| c.lr);
            Some(Adam::from_state(model.params(), &ckpt.optimizer, lr, step, path)?)
        }
        _ => None,
    };
    Ok(LoadedModel {
        model,
        adam,
        train_config,
        iteration,
    })
}

pub fn load_model<T: Float>(path: &Path) -> Result<LoadedModel<T>> {
    model_from_checkpoint(&load_checkpoint(path)?, path)
}

pub fn load_extractor(cfg: &TrainConfig) -> Result<PerceptualExtractor<f32>> {
    match &cfg.extractor {
        Some(p) => PerceptualExtractor::load(p),
        None => PerceptualExtractor::surrogate(SURROGATE_WIDTHS, derive_seed(&[cfg.seed, 0xe47])),
    }
}

/// Where a finished run left its outputs.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub log: PathBuf,
    pub iteration: u64,
}

/// Runs `cfg.iterations` steps (continuing from `resume` if given), writing
/// periodic checkpoints, `final.ckpt` and one log record per step.
pub fn train_loop(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = Dataset::discover(&cfg.content_dir, &cfg.style_dir)?;
    let ext = load_extractor(cfg)?;
    let (mut model, mut adam, start) = match resume {
        Some(path) => {
            let l = load_model::<f32>(path)?;
            if l.model.config() != &cfg.model_config() {
                return Err(Error::Config(format!(
                    "{} was trained with a different model configuration",
                    path.display()
                )));
            }
            let mut adam = l.adam.unwrap_or_else(|| Adam::new(l.model.params(), cfg.lr));
            adam.lr = cfg.lr;
            (l.model, adam, l.iteration)
        }
        None => {
            let model = StyleModel::<f32>::new(cfg.model_config(), cfg.seed)?;
            let adam = Adam::new(model.params(), cfg.lr);
            (model, adam, 0)
        }
    };
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join(LOG_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let aug = cfg.augment();
    let clock = Instant::now();
    let mut checkpoints = Vec::new();
    for iteration in start + 1..=cfg.iterations {
        let (content, style) = data.batch::<f32>(iteration - 1, cfg.batch, cfg.seed, &aug)?;
        let r = train_step(
            &mut model,
            &mut adam,
            &ext,
            &content,
            &style,
            &cfg.loss_weights,
            cfg.k,
            iteration,
        )?;
        let rec = LogRecord {
            iteration,
            content: r.content,
            style: r.style,
            aes: r.aes,
            total: r.total,
            wall_time: clock.elapsed().as_secs_f64(),
        };
        let line = serde_json::to_string(&rec).expect("plain record serialises");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if iteration % cfg.checkpoint_every == 0 {
            let path = cfg.out_dir.join(checkpoint_name(iteration));
            save_model(&path, &model, Some(&adam), Some(cfg), iteration)?;
            checkpoints.push(path);
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_checkpoint = cfg.out_dir.join(FINAL_CHECKPOINT);
    let iteration = cfg.iterations.max(start);
    save_model(&final_checkpoint, &model, Some(&adam), Some(cfg), iteration)?;
    Ok(TrainOutcome {
        final_checkpoint,
        checkpoints,
        log: log_path,
        iteration,
    })
}

/// Reads a training log back.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
        .collect()
}
