use std::fs;
use std::path::{Path, PathBuf};

use aesfa_core::data::{discover_images, load_rgb, rgb_to_tensor, save_png, tensor_to_rgb};
use aesfa_core::encoders::SIZE_MULTIPLE;
use aesfa_core::extractor::PerceptualExtractor;
use aesfa_core::inference::{stylize_any, stylize_blend_any};
use aesfa_core::metrics::{bench_inference, eval_pairs};
use aesfa_core::tensor::Tensor;
use aesfa_core::training::{load_extractor, load_model, train_loop, TrainConfig};
use aesfa_core::{Error, ModelConfig, StyleModel};

use crate::args::{BenchArgs, Command, EvalArgs, StylizeArgs, TrainArgs};
use crate::{usage, CliError};

pub(crate) fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Stylize(a) => stylize(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    }
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(usage(format!("--alpha {alpha} is outside [0, 1]")))
    }
}

/// Merges flags over the optional TOML file over the built-in defaults and
/// validates the result. Flag values are checked before the file is read.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    if let Some(alpha) = a.alpha {
        check_alpha(alpha)?;
    }
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            toml::from_str::<TrainConfig>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! overlay {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag.clone() { cfg.$($field).+ = v; })*
        };
    }
    overlay! {
        content_dir => content_dir,
        style_dir => style_dir,
        out => out_dir,
        iters => iterations,
        batch => batch,
        lr => lr,
        alpha => alpha,
        ng => n_g,
        k_neg => k,
        lambda_c => loss_weights.lambda_c,
        lambda_s => loss_weights.lambda_s,
        lambda_aes => loss_weights.lambda_aes,
        seed => seed,
        checkpoint_every => checkpoint_every,
        resize => resize,
        crop => crop,
        width_divisor => width_divisor,
    }
    if a.extractor.is_some() {
        cfg.extractor = a.extractor.clone();
    }
    if cfg.content_dir.as_os_str().is_empty() || cfg.style_dir.as_os_str().is_empty() {
        return Err(usage(
            "training needs --content-dir and --style-dir (or both keys in --config)",
        ));
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = train_config(&a)?;
    let out = train_loop(&cfg, a.resume.as_deref())?;
    println!(
        "trained to iteration {}; final checkpoint {}; log {}",
        out.iteration,
        out.final_checkpoint.display(),
        out.log.display()
    );
    Ok(())
}

fn read_image(path: &Path) -> Result<Tensor<f32>, CliError> {
    Ok(rgb_to_tensor(&load_rgb(path)?))
}

fn stylize(a: StylizeArgs) -> Result<(), CliError> {
    if a.alpha.is_some() {
        return Err(usage(
            "--alpha cannot be overridden at inference; the frequency split is fixed by the checkpoint",
        ));
    }
    let model = load_model::<f32>(&a.model)?.model;
    let content = read_image(&a.content)?;
    let out = match (&a.style, &a.style_high, &a.style_low) {
        (Some(s), None, None) => stylize_any(&model, &content, &read_image(s)?)?,
        (None, Some(h), Some(l)) => stylize_blend_any(&model, &content, &read_image(h)?, &read_image(l)?)?,
        _ => return Err(usage("give either --style or both --style-high and --style-low")),
    };
    ensure_parent(&a.out)?;
    save_png(&tensor_to_rgb(&out, 0)?, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn gather(files: &[PathBuf], dir: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let mut out = files.to_vec();
    if let Some(d) = dir {
        out.extend(discover_images(d)?);
    }
    Ok(out)
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let contents = gather(&a.content, a.content_dir.as_deref())?;
    let styles = gather(&a.style, a.style_dir.as_deref())?;
    if contents.is_empty() || styles.is_empty() {
        return Err(usage(
            "eval needs at least one content and one style (files or folders)",
        ));
    }
    let loaded = load_model::<f32>(&a.model)?;
    let ext = match (&a.extractor, &loaded.train_config) {
        (Some(p), _) => PerceptualExtractor::load(p)?,
        (None, Some(tc)) => load_extractor(tc)?,
        (None, None) => load_extractor(&TrainConfig::default())?,
    };
    let report = eval_pairs(&loaded.model, &contents, &styles, &ext)?;
    report.write_jsonl(&a.out)?;
    let s = &report.summary;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    println!(
        "pairs {}  failures {}  mean SSIM {}  mean style loss {}  mean seconds {}",
        s.pairs,
        s.failures,
        fmt(s.mean_ssim),
        fmt(s.mean_style_loss),
        fmt(s.timing.map(|t| t.mean)),
    );
    println!("report written to {}", a.out.display());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    if a.size == 0 || !a.size.is_multiple_of(SIZE_MULTIPLE) {
        return Err(usage(format!(
            "--size {} must be a positive multiple of {SIZE_MULTIPLE}",
            a.size
        )));
    }
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let model = match &a.model {
        Some(p) => load_model::<f32>(p)?.model,
        None => StyleModel::<f32>::new(ModelConfig::default(), a.seed)?,
    };
    let r = bench_inference(&model, a.size, a.reps, a.warmup)?;
    let t = r.timing;
    println!(
        "size {}x{}  reps {}  warmup {}  mean {:.6} s  std {:.6} s  min {:.6} s  max {:.6} s",
        r.size, r.size, t.reps, r.warmup, t.mean, t.std, t.min, t.max
    );
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        let json = serde_json::to_string_pretty(&r).expect("plain report serialises");
        fs::write(out, json + "\n").map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
    }
    Ok(())
}
