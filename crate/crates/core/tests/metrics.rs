mod common;

use std::path::PathBuf;

use aesfa_core::extractor::PerceptualExtractor;
use aesfa_core::metrics::{bench_inference, bench_with, eval_pairs, eval_pairs_with, ssim, EvalReport};
use aesfa_core::tensor::Tensor;
use aesfa_core::{ModelConfig, StyleModel};
use aesfa_testkit::fixtures::{content_image, random_tensor, style_image};
use aesfa_testkit::oracles;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    random_tensor(rng, &[1, 3, h, w]).map(|v| 0.5 + 0.5 * v)
}

#[test]
fn ssim_of_identical_images_is_one() {
    let x = unit_image(&mut ChaCha8Rng::seed_from_u64(1), 32, 32);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn ssim_constant_closed_form() {
    let (c1, c2) = (0.2f64, 0.7f64);
    let a = Tensor::full(&[1, 3, 16, 16], c1);
    let b = Tensor::full(&[1, 3, 16, 16], c2);
    let (k1, k2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let want = (2.0 * c1 * c2 + k1) * k2 / ((c1 * c1 + c2 * c2 + k1) * k2);
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
}

#[test]
fn ssim_matches_sliding_window_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let (a, b) = (unit_image(&mut rng, 32, 32), unit_image(&mut rng, 32, 32));
        assert!((ssim(&a, &b).unwrap() - oracles::ssim(&a, &b)).abs() < 1e-6);
    }
    assert!(ssim(&unit_image(&mut rng, 32, 32), &unit_image(&mut rng, 32, 24)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_symmetric_and_bounded(seed in any::<u64>(), h in 11usize..24, w in 11usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (unit_image(&mut rng, h, w), unit_image(&mut rng, h, w));
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }
}

fn write_images(dir: &std::path::Path) -> (Vec<PathBuf>, Vec<PathBuf>) {
    let mut cs = Vec::new();
    let mut ss = Vec::new();
    for i in 0..2u64 {
        let p = dir.join(format!("c{i}.png"));
        content_image(i, 40, 36).save(&p).unwrap();
        cs.push(p);
    }
    for i in 0..3u64 {
        let p = dir.join(format!("s{i}.png"));
        style_image(i, 64, 48).save(&p).unwrap();
        ss.push(p);
    }
    (cs, ss)
}

#[test]
fn eval_covers_every_pair_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let (cs, ss) = write_images(dir.path());
    let ext = PerceptualExtractor::<f32>::surrogate([4, 4, 4, 4], 1).unwrap();
    let model = StyleModel::<f32>::new(
        ModelConfig {
            groups: 2,
            ..ModelConfig::scaled(8)
        },
        1,
    )
    .unwrap();
    let report = eval_pairs(&model, &cs, &ss, &ext).unwrap();
    assert_eq!(report.records.len(), 6);
    assert_eq!(report.summary.failures, 0);
    let mean = report.records.iter().map(|r| r.ssim.unwrap()).sum::<f64>() / 6.0;
    assert!((report.summary.mean_ssim.unwrap() - mean).abs() < 1e-9);
    let mean_sl = report.records.iter().map(|r| r.style_loss.unwrap()).sum::<f64>() / 6.0;
    assert!((report.summary.mean_style_loss.unwrap() - mean_sl).abs() < 1e-9);

    // Shuffled inputs: same values, different order.
    let mut rc = cs.clone();
    rc.reverse();
    let mut rs = ss.clone();
    rs.rotate_left(1);
    let shuffled = eval_pairs(&model, &rc, &rs, &ext).unwrap();
    for r in &report.records {
        let twin = shuffled
            .records
            .iter()
            .find(|s| s.content == r.content && s.style == r.style)
            .unwrap();
        assert_eq!((twin.ssim, twin.style_loss), (r.ssim, r.style_loss));
    }

    let out = dir.path().join("eval/report.jsonl");
    report.write_jsonl(&out).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().last().unwrap().starts_with("{\"summary\""));
}

#[test]
fn pass_through_stub_has_unit_ssim() {
    let dir = tempfile::tempdir().unwrap();
    let (cs, ss) = write_images(dir.path());
    let ext = PerceptualExtractor::<f32>::surrogate([4, 4, 4, 4], 1).unwrap();
    let report = eval_pairs_with(&cs, &ss, &ext, |c, _| Ok(c.clone())).unwrap();
    assert!(report.records.iter().all(|r| (r.ssim.unwrap() - 1.0).abs() < 1e-9));
}

#[test]
fn eval_records_failures_and_rejects_empty_sets() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cs, ss) = write_images(dir.path());
    let broken = dir.path().join("broken.png");
    std::fs::write(&broken, b"not an image").unwrap();
    cs.push(broken);
    let ext = PerceptualExtractor::<f32>::surrogate([4, 4, 4, 4], 1).unwrap();
    let report = eval_pairs_with(&cs, &ss, &ext, |c, _| Ok(c.clone())).unwrap();
    assert_eq!(report.records.len(), 9);
    assert_eq!(report.summary.failures, 3);
    let ok = EvalReport::from_records(report.records[..6].to_vec());
    assert_eq!(ok.summary.mean_ssim, report.summary.mean_ssim);
    assert!(eval_pairs_with(&[], &ss, &ext, |c, _| Ok(c.clone())).is_err());
}

#[test]
fn bench_counts_passes() {
    let mut calls = 0;
    let (stats, passes) = bench_with(5, 2, || {
        calls += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!((passes, calls, stats.reps), (7, 7, 5));
    assert!(stats.min <= stats.mean && stats.mean <= stats.max);
    assert!(bench_with(0, 1, || Ok(())).is_err());

    let model = StyleModel::<f32>::new(
        ModelConfig {
            groups: 2,
            ..ModelConfig::scaled(8)
        },
        1,
    )
    .unwrap();
    let r = bench_inference(&model, 32, 2, 1).unwrap();
    assert_eq!(r.forward_passes, 3);
    assert!(bench_inference(&model, 40, 2, 1).is_err());
}
