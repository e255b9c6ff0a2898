mod common;

use std::path::Path;

use aesfa_core::checkpoint::{load_checkpoint, read_manifest};
use aesfa_core::extractor::PerceptualExtractor;
use aesfa_core::losses::LossWeights;
use aesfa_core::training::{
    checkpoint_name, load_model, read_log, train_loop, train_step, Adam, TrainConfig, FINAL_CHECKPOINT,
};
use aesfa_core::{Error, ModelConfig, StyleModel};
use aesfa_testkit::fixtures::write_dataset;
use common::*;

fn config(root: &Path, out: &str, iterations: u64) -> TrainConfig {
    let content_dir = root.join("content");
    if !content_dir.exists() {
        write_dataset(root, 4, 56);
    }
    TrainConfig {
        content_dir,
        style_dir: root.join("style"),
        out_dir: root.join(out),
        iterations,
        batch: 2,
        resize: 48,
        crop: 48,
        width_divisor: 8,
        n_g: 2,
        checkpoint_every: 2,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoints_resume_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "full", 4);
    let run = train_loop(&cfg, None).unwrap();
    let names: Vec<_> = run
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec![checkpoint_name(2), checkpoint_name(4)]);
    assert!(cfg.out_dir.join(FINAL_CHECKPOINT).exists());
    let files = std::fs::read_dir(&cfg.out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ckpt"));
    assert_eq!(files.count(), 3);
    let log = read_log(&run.log).unwrap();
    assert_eq!(log.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert!(log.iter().all(|r| r.total.is_finite()));

    // Same seed, fresh run: identical losses.
    let again = train_loop(&config(dir.path(), "again", 4), None).unwrap();
    let log2 = read_log(&again.log).unwrap();
    let totals = |l: &[aesfa_core::training::LogRecord]| l.iter().map(|r| r.total.to_bits()).collect::<Vec<_>>();
    assert_eq!(totals(&log), totals(&log2));

    // Resume from step 2 and finish: bitwise-identical weights and moments.
    let resumed_cfg = config(dir.path(), "resumed", 4);
    let resumed = train_loop(&resumed_cfg, Some(&cfg.out_dir.join(checkpoint_name(2)))).unwrap();
    let a = load_checkpoint::<f32>(&run.final_checkpoint).unwrap();
    let b = load_checkpoint::<f32>(&resumed.final_checkpoint).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.optimizer, b.optimizer);
    let tail = read_log(&resumed.log).unwrap();
    assert_eq!(totals(&tail), totals(&log[2..]));
}

#[test]
fn checkpoint_round_trip_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let model = StyleModel::<f32>::new(ModelConfig::scaled(4), 3).unwrap();
    let path = dir.path().join("m.ckpt");
    aesfa_core::training::save_model(&path, &model, None, None, 0).unwrap();
    let back = load_model::<f32>(&path).unwrap();
    for ((n1, t1), (n2, t2)) in model.params().iter().zip(back.model.params().iter()) {
        assert_eq!(n1, n2);
        assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let bytes = std::fs::read(&path).unwrap();
    let (manifest, _) = read_manifest(&bytes, &path).unwrap();
    assert_eq!(manifest.parameters.len(), model.params().len());
    let last = &manifest.parameters.last().unwrap().name;

    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    let err = load_model::<f32>(&path).unwrap_err();
    assert!(matches!(err, Error::Checkpoint { .. }));
    assert!(err.to_string().contains(last.as_str()), "{err}");
}

#[test]
fn extractor_stays_frozen_and_adam_moves_model() {
    let ext = PerceptualExtractor::<f32>::surrogate([4, 4, 4, 4], 1).unwrap();
    let before: Vec<_> = ext.tensors().cloned().collect();
    let mut model = StyleModel::<f32>::new(
        ModelConfig {
            groups: 2,
            ..ModelConfig::scaled(8)
        },
        2,
    )
    .unwrap();
    let start = model.clone();
    let mut adam = Adam::new(model.params(), 1e-3);
    let c = contents(&[1, 2], 48, 48);
    let s = styles(&[1, 2], 48, 48);
    for it in 1..=2 {
        train_step(&mut model, &mut adam, &ext, &c, &s, &LossWeights::default(), 1, it).unwrap();
    }
    assert!(ext.tensors().zip(&before).all(|(a, b)| a == b));
    assert!(model
        .params()
        .iter()
        .zip(start.params().iter())
        .any(|(a, b)| a.1 != b.1));
}

#[test]
fn empty_dataset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "out", 2);
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    cfg.style_dir = empty;
    assert!(matches!(train_loop(&cfg, None), Err(Error::Config(_))));
}

#[test]
fn config_rejects_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let base = config(dir.path(), "out", 2);
    assert!(base.validate().is_ok());
    for bad in [
        TrainConfig { k: 2, ..base.clone() },
        TrainConfig {
            batch: 1,
            k: 1,
            ..base.clone()
        },
        TrainConfig {
            alpha: 1.5,
            ..base.clone()
        },
        TrainConfig {
            lr: 0.0,
            ..base.clone()
        },
        TrainConfig {
            crop: 40,
            ..base.clone()
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}
