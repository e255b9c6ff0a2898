//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails. Optional positional arguments filter by name.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use aesfa_core::data::rgb_to_tensor;
use aesfa_core::extractor::PerceptualExtractor;
use aesfa_core::freq_ops::{octconv, OctavePair};
use aesfa_core::generator::{adaoct_apply, apply_predicted};
use aesfa_core::inference::stylize_any;
use aesfa_core::losses::{
    aesthetic_contrastive_loss, efdm, loss_terms, select_negatives, ContrastiveConfig, LossTargets, LossWeights,
};
use aesfa_core::metrics::{bench_inference, ssim};
use aesfa_core::tensor::{Graph, Tensor};
use aesfa_core::training::{
    checkpoint_name, load_model, read_log, save_model, train_loop, Adam, TrainConfig, FINAL_CHECKPOINT, LOG_FILE,
};
use aesfa_core::{EncoderKind, ModelConfig, StyleModel};
use aesfa_testkit::fixtures::{content_image, random_tensor, style_image, write_dataset};
use aesfa_testkit::oracles;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 10] = [
        ("octconv_oracle", octconv_oracle),
        ("adaoct_oracle", adaoct_oracle),
        ("efdm_properties", efdm_properties),
        ("gradient_check", gradient_check),
        ("contrastive_selection", contrastive_selection),
        ("training_smoke", training_smoke),
        ("resolution_generality", resolution_generality),
        ("blending_degeneracy", blending_degeneracy),
        ("ssim_oracle", ssim_oracle),
        ("checkpoint_round_trip", checkpoint_round_trip),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t0: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let e = t0.elapsed();
    ensure(e < limit, || format!("{what} took {e:.1?}, limit {limit:?}"))
}

fn bits_equal(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

// ≥100 random octave convolutions (≤8 channels, ≤16x16) against the term by
// term composition of dense conv, pool and upsample.
fn octconv_oracle() -> Result<String, String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c7);
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    let fixtures = 120;
    for f in 0..fixtures {
        let split = |rng: &mut ChaCha8Rng| loop {
            let (h, l) = (rng.gen_range(0..=4usize), rng.gen_range(0..=4usize));
            if h > 0 {
                return (h, l);
            }
        };
        let input = split(&mut rng);
        let output = split(&mut rng);
        let depthwise = rng.gen_bool(0.25);
        let k = if depthwise || rng.gen_bool(0.7) { 3 } else { 1 };
        let stride = if rng.gen_bool(0.3) { 2 } else { 1 };
        let sides: &[usize] = if stride == 2 {
            &[4, 8, 12, 16]
        } else {
            &[2, 4, 6, 8, 10, 12, 14, 16]
        };
        let (h, w) = (pick(&mut rng, sides), pick(&mut rng, sides));
        let n = rng.gen_range(1..=2);
        let bias = rng.gen_bool(0.5);
        let p = random_octconv(&mut rng, input, output, k, stride, k / 2, depthwise, bias);
        let x = random_pair(&mut rng, n, input, h, w);
        let (oh, ol) = oracle_octconv(&x, &p);
        let y = octconv(&x, &p).map_err(|e| format!("fixture {f}: {e}"))?;
        let y32 = octconv(&cast_pair(&x), &cast_params(&p)).map_err(|e| format!("fixture {f}: {e}"))?;
        worst64 = worst64.max(rel(&y.high, &oh)).max(rel(&y.low, &ol));
        worst32 = worst32.max(rel(&y32.high.cast(), &oh)).max(rel(&y32.low.cast(), &ol));
        ensure(worst64 < 1e-5 && worst32 < 1e-5, || {
            format!("fixture {f} ({input:?}->{output:?}, k {k}, stride {stride}, dw {depthwise}): rel {worst64:.2e} / f32 {worst32:.2e}")
        })?;
    }
    within(t0, Duration::from_secs(10), "octconv fixtures")?;
    Ok(format!(
        "{fixtures} fixtures, max rel err {worst64:.1e} (f64) / {worst32:.1e} (f32), tol 1e-5"
    ))
}

// ≥50 predicted-kernel stages against block-diagonal dense convolutions.
fn adaoct_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xada);
    let (mut worst_stage, mut worst_full) = (0.0f64, 0.0f64);
    let fixtures = 60;
    for f in 0..fixtures {
        let groups = pick(&mut rng, &[1, 2, 4]);
        let widths: Vec<usize> = [2, 4, 6, 8].into_iter().filter(|c| c % groups == 0).collect();
        let (ch, cl) = (pick(&mut rng, &widths), pick(&mut rng, &widths));
        let n = rng.gen_range(1..=2);
        let (h, w) = (pick(&mut rng, &[4, 8, 12, 16]), pick(&mut rng, &[4, 8, 12, 16]));
        let x = random_pair(&mut rng, n, (ch, cl), h, w);
        let kh = random_kernels(&mut rng, n, ch, groups);
        let kl = random_kernels(&mut rng, n, cl, groups);
        let out = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let mix = random_octconv(&mut rng, (ch, cl), out, 3, 1, 1, false, true);

        // Single stage on the autograd path, in f32 like inference.
        let mut g = Graph::<f32>::new();
        let xv = g.constant(x.high.cast());
        let k32 = aesfa_core::kernel_prediction::AestheticKernelSet {
            spatial: kh.spatial.cast(),
            pointwise: kh.pointwise.cast(),
            bias: kh.bias.cast(),
            groups,
        };
        let kv = k32.bind(&mut g);
        let y = apply_predicted(&mut g, xv, &kv).map_err(|e| e.to_string())?;
        let want = oracles::apply_predicted(&x.high, &kh.spatial, &kh.pointwise, &kh.bias, groups);
        worst_stage = worst_stage.max(rel(&g.value(y).cast(), &want));

        // Both branches plus the frequency-mixing conv.
        let full = adaoct_apply(&x, &kh, &kl, &mix).map_err(|e| e.to_string())?;
        let sh = oracles::apply_predicted(&x.high, &kh.spatial, &kh.pointwise, &kh.bias, groups);
        let sl = oracles::apply_predicted(&x.low, &kl.spatial, &kl.pointwise, &kl.bias, groups);
        let (oh, ol) = oracle_octconv(&OctavePair::new(sh, sl).map_err(|e| e.to_string())?, &mix);
        worst_full = worst_full.max(rel(&full.high, &oh)).max(rel(&full.low, &ol));
        ensure(worst_stage < 1e-5 && worst_full < 1e-5, || {
            format!("fixture {f} (c {ch}/{cl}, groups {groups}): stage {worst_stage:.2e}, full {worst_full:.2e}")
        })?;
    }
    Ok(format!(
        "{fixtures} fixtures, max rel err {worst_stage:.1e} (grouped stage, f32) / {worst_full:.1e} (AdaOct, f64), tol 1e-5"
    ))
}

// 1000 random vectors up to length 10^4, plus the worked example.
fn efdm_properties() -> Result<String, String> {
    let t0 = Instant::now();
    let got = efdm(&[3.0, 1.0, 2.0], &[10.0, 30.0, 20.0]).map_err(|e| e.to_string())?;
    ensure(got == [30.0, 10.0, 20.0], || format!("worked example gave {got:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xefd);
    let mut total = 0usize;
    for v in 0..1000 {
        let n = if v == 0 { 10_000 } else { rng.gen_range(1..=10_000) };
        // Every fourth vector is coarsely quantised so ties are common.
        let coarse = v % 4 == 0;
        let draw = |rng: &mut ChaCha8Rng| {
            let u: f64 = rng.gen_range(-1.0..1.0);
            if coarse {
                (u * 8.0).round()
            } else {
                u
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng) * 3.0 + 1.0).collect();
        let out = efdm(&x, &y).map_err(|e| e.to_string())?;
        let mut a: Vec<u64> = out.iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = y.iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        ensure(a == b, || {
            format!("vector {v} (n {n}): output multiset differs from target")
        })?;
        // Walking x in (value, index) order, the output never decreases.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap().then(i.cmp(&j)));
        ensure(order.windows(2).all(|p| out[p[0]] <= out[p[1]]), || {
            format!("vector {v} (n {n}): rank order not preserved")
        })?;
        total += n;
    }
    within(t0, Duration::from_secs(5), "EFDM checks")?;
    Ok(format!(
        "1000 vectors ({total} entries, max length 10000) and the worked example"
    ))
}

struct GradSetup {
    model: StyleModel<f64>,
    ext: PerceptualExtractor<f64>,
    content: Tensor<f64>,
    style: Tensor<f64>,
    targets: LossTargets<f64>,
}

fn grad_setup() -> GradSetup {
    let mut model = StyleModel::<f64>::new(ModelConfig::micro(), 11).unwrap();
    // Move the untrained output off the clamp's lower kink.
    let id = model.params().find("generator.to_rgb.high.bias").unwrap();
    model.params_mut().get_mut(id).data_mut().fill(0.5);
    let ext = PerceptualExtractor::<f64>::surrogate([4, 4, 4, 4], 5).unwrap();
    let images = |f: fn(u64, u32, u32) -> image::RgbImage, side: u32| {
        let items: Vec<Tensor<f64>> = (0..2).map(|s| rgb_to_tensor(&f(s, side, side))).collect();
        Tensor::stack_batch(&items).unwrap()
    };
    let content = images(content_image, 16);
    let style = images(style_image, 48);
    let mut targets = LossTargets::prepare(&model, &ext, &content, &style).unwrap();
    targets.negatives = Some(vec![vec![1], vec![0]]);
    GradSetup {
        model,
        ext,
        content,
        style,
        targets,
    }
}

fn grad_eval(s: &GradSetup, model: &StyleModel<f64>, with_grads: bool) -> ([f64; 3], Vec<Vec<Tensor<f64>>>) {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, with_grads);
    let c = g.constant(s.content.clone());
    let st = g.constant(s.style.clone());
    let out = model.forward(&mut g, &p, c, st).unwrap();
    let t = loss_terms(&mut g, model, &p, out, &s.targets, &s.ext, &LossWeights::default(), 1).unwrap();
    let terms = [t.content, t.style, t.aes];
    let values = terms.map(|v| g.scalar(v));
    let mut grads = Vec::new();
    if with_grads {
        for v in terms {
            let gr = g.backward(v).unwrap();
            grads.push(
                p.vars()
                    .iter()
                    .zip(model.params().iter())
                    .map(|(&pv, (_, w))| gr.get(pv).cloned().unwrap_or_else(|| Tensor::zeros(w.shape())))
                    .collect(),
            );
        }
    }
    (values, grads)
}

// Every scalar parameter of the float64 micro-model, central differences
// with step 1e-4.
fn gradient_check() -> Result<String, String> {
    const STEP: f64 = 1e-4;
    let t0 = Instant::now();
    let s = grad_setup();
    let (_, analytic) = grad_eval(&s, &s.model, true);
    let mut model = s.model.clone();
    let ids: Vec<_> = model.params().ids().collect();
    let mut checked = 0usize;
    let mut bad = [0usize; 3];
    for (pi, &id) in ids.iter().enumerate() {
        for k in 0..model.params().get(id).numel() {
            let orig = model.params().get(id).data()[k];
            model.params_mut().get_mut(id).data_mut()[k] = orig + STEP;
            let (plus, _) = grad_eval(&s, &model, false);
            model.params_mut().get_mut(id).data_mut()[k] = orig - STEP;
            let (minus, _) = grad_eval(&s, &model, false);
            model.params_mut().get_mut(id).data_mut()[k] = orig;
            for term in 0..3 {
                let numeric = (plus[term] - minus[term]) / (2.0 * STEP);
                let a = analytic[term][pi].data()[k];
                if (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6) >= 1e-3 {
                    bad[term] += 1;
                }
            }
            checked += 1;
        }
    }
    let rates = bad.map(|b| 100.0 * (1.0 - b as f64 / checked as f64));
    let detail = format!(
        "{checked} parameters; within rel 1e-3: content {:.2}%, style {:.2}%, aesthetic {:.2}% (need 99%)",
        rates[0], rates[1], rates[2]
    );
    ensure(rates.iter().all(|&r| r >= 99.0), || detail.clone())?;
    within(t0, Duration::from_secs(120), "gradient check")?;
    Ok(detail)
}

fn style_distance(ext: &PerceptualExtractor<f64>, out: &Tensor<f64>, i: usize, st: &Tensor<f64>, j: usize) -> f64 {
    let fo = ext.features(out).unwrap();
    let fs = ext.features(st).unwrap();
    fo.iter().zip(&fs).map(|(a, b)| oracles::matched_norm(a, i, b, j)).sum()
}

// Negatives against exhaustive argmin on 21 batch-4 fixtures, and the
// contrastive value against a brute-force sum of ratios.
fn contrastive_selection() -> Result<String, String> {
    let ext = PerceptualExtractor::<f64>::surrogate([4, 6, 8, 8], 21).unwrap();
    let fixtures = 21u64;
    for f in 0..fixtures {
        let k = 1 + (f % 3) as usize;
        let out: Tensor<f64> = contents(&[f, f + 100, f + 200, f + 300], 32, 32).cast();
        let st: Tensor<f64> = styles(&[f, f + 1, f + 2, f + 3], 32, 32).cast();
        let cfg = ContrastiveConfig {
            k,
            selection_extractor: &ext,
        };
        let got = select_negatives(&out, &st, &cfg).map_err(|e| e.to_string())?;
        for (i, neg) in got.iter().enumerate() {
            let mut cand: Vec<(f64, usize)> = (0..4)
                .filter(|&j| j != i)
                .map(|j| (style_distance(&ext, &out, i, &st, j), j))
                .collect();
            cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = cand.iter().take(k).map(|c| c.1).collect();
            ensure(neg == &want, || {
                format!("fixture {f}, k {k}, sample {i}: {neg:?} vs {want:?}")
            })?;
        }
    }

    let model = StyleModel::<f64>::new(ModelConfig::micro(), 4).unwrap();
    let mut worst = 0.0f64;
    let values = 4;
    for f in 0..values as u64 {
        let k = 1 + (f % 3) as usize;
        let out: Tensor<f64> = contents(&[f, f + 7, f + 9, f + 13], 32, 32).cast();
        let st: Tensor<f64> = styles(&[f + 3, f + 4, f + 5, f + 6], 32, 32).cast();
        let cfg = ContrastiveConfig {
            k,
            selection_extractor: &ext,
        };
        let got = aesthetic_contrastive_loss(&out, &st, &model, &cfg).map_err(|e| e.to_string())?;
        let fo = model.encoder_features(EncoderKind::Aesthetic, &out).unwrap();
        let fs = model.encoder_features(EncoderKind::Aesthetic, &st).unwrap();
        let mut want = 0.0;
        for i in 0..4 {
            let mut cand: Vec<(f64, usize)> = (0..4)
                .filter(|&j| j != i)
                .map(|j| (style_distance(&ext, &out, i, &st, j), j))
                .collect();
            cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in fo.iter().zip(&fs) {
                for (x, y) in [(&a.high, &b.high), (&a.low, &b.low)] {
                    let den: f64 = cand[..k].iter().map(|&(_, j)| oracles::matched_norm(x, i, y, j)).sum();
                    want += oracles::matched_norm(x, i, y, i) / (den + 1e-8);
                }
            }
        }
        worst = worst.max((got - want).abs() / want.abs());
        ensure(worst < 1e-5, || {
            format!("contrastive fixture {f} (k {k}): {got} vs {want}")
        })?;
    }
    Ok(format!(
        "{fixtures} selection fixtures (batch 4, k 1..3) match; {values} loss values within rel {worst:.1e} (tol 1e-5)"
    ))
}

// 200 seeded iterations on 8 content + 8 style 64x64 fixtures.
fn training_smoke() -> Result<String, String> {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (content_dir, style_dir) = write_dataset(dir.path(), 8, 64);
    let cfg = TrainConfig {
        content_dir,
        style_dir,
        out_dir: dir.path().join("run"),
        iterations: 200,
        batch: 8,
        resize: 64,
        crop: 64,
        width_divisor: 4,
        checkpoint_every: 200,
        seed: 0,
        ..TrainConfig::default()
    };
    let out = train_loop(&cfg, None).map_err(|e| e.to_string())?;
    let log = read_log(&out.log).map_err(|e| e.to_string())?;
    ensure(log.len() == 200, || format!("{} log records", log.len()))?;
    let mean = |r: &[aesfa_core::training::LogRecord]| r.iter().map(|x| x.total).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&log[..20]), mean(&log[180..]));
    let ratio = last / first;
    let detail = format!(
        "mean total loss first 20 {first:.2}, last 20 {last:.2}, ratio {ratio:.3} (need <= 0.8), {:.0} s",
        t0.elapsed().as_secs_f64()
    );
    ensure(ratio <= 0.8, || detail.clone())?;
    within(t0, Duration::from_secs(600), "training smoke")?;
    Ok(detail)
}

// Full-size model, 256x256 style, contents of several sizes.
fn resolution_generality() -> Result<String, String> {
    let model = StyleModel::<f32>::new(ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let style: Tensor<f32> = rgb_to_tensor(&style_image(3, 256, 256));
    let mut sizes = Vec::new();
    for (h, w) in [(256u32, 256u32), (512, 512), (1024, 1024), (256, 512)] {
        let content: Tensor<f32> = rgb_to_tensor(&content_image(u64::from(h + w), w, h));
        let t0 = Instant::now();
        let out = stylize_any(&model, &content, &style).map_err(|e| format!("{h}x{w}: {e}"))?;
        let want = [1, 3, h as usize, w as usize];
        ensure(out.shape() == want, || {
            format!("{h}x{w}: output shape {:?}", out.shape())
        })?;
        ensure(out.all_finite(), || format!("{h}x{w}: non-finite output"))?;
        sizes.push(format!("{h}x{w} {:.2} s", t0.elapsed().as_secs_f64()));
    }
    let bench = bench_inference(&model, 256, 3, 1).map_err(|e| e.to_string())?;
    Ok(format!(
        "shapes and finiteness ok: {}; bench 256x256 forward mean {:.3} s (reported, not asserted)",
        sizes.join(", "),
        bench.timing.mean
    ))
}

fn aesfa(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_aesfa"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("aesfa {args:?} failed: {}", String::from_utf8_lossy(&o.stderr))
    })
}

// The CLI with --style-high F --style-low F writes the same bytes as --style F.
fn blending_degeneracy() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let model = StyleModel::<f32>::new(ModelConfig::default(), 5).map_err(|e| e.to_string())?;
    save_model(Path::new(&p("model.ckpt")), &model, None, None, 0).map_err(|e| e.to_string())?;
    content_image(9, 72, 60)
        .save(p("content.png"))
        .map_err(|e| e.to_string())?;
    style_image(9, 80, 64).save(p("style.png")).map_err(|e| e.to_string())?;
    let (m, c, s) = (p("model.ckpt"), p("content.png"), p("style.png"));
    let (plain, blend) = (p("plain.png"), p("blend.png"));
    aesfa(&[
        "stylize",
        "--model",
        &m,
        "--content",
        &c,
        "--style",
        &s,
        "--out",
        &plain,
    ])?;
    aesfa(&[
        "stylize",
        "--model",
        &m,
        "--content",
        &c,
        "--style-high",
        &s,
        "--style-low",
        &s,
        "--out",
        &blend,
    ])?;
    let (a, b) = (
        fs::read(&plain).map_err(|e| e.to_string())?,
        fs::read(&blend).map_err(|e| e.to_string())?,
    );
    ensure(a == b, || "blended output differs from plain stylization".into())?;
    Ok(format!("outputs bitwise identical ({} bytes, 72x60 content)", a.len()))
}

// 100 random 32x32 pairs against the explicit sliding-window sum.
fn ssim_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x551);
    let mut worst = 0.0f64;
    let mut self_worst = 0.0f64;
    for _ in 0..100 {
        let a = random_tensor(&mut rng, &[1, 3, 32, 32]).map(|v| 0.5 + 0.5 * v);
        let b = random_tensor(&mut rng, &[1, 3, 32, 32]).map(|v| 0.5 + 0.5 * v);
        let got = ssim(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracles::ssim(&a, &b)).abs());
        self_worst = self_worst.max((ssim(&a, &a).map_err(|e| e.to_string())? - 1.0).abs());
    }
    ensure(worst < 1e-6, || format!("max abs err {worst:.2e}"))?;
    ensure(self_worst < 1e-12, || format!("ssim(x, x) off by {self_worst:.2e}"))?;
    Ok(format!(
        "100 pairs, max abs err {worst:.1e} (tol 1e-6); |ssim(x,x) - 1| <= {self_worst:.1e}"
    ))
}

// Save/load bitwise, and a 4-step run resumed from step 2 against the
// uninterrupted run.
fn checkpoint_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model = StyleModel::<f32>::new(ModelConfig::default(), 1).map_err(|e| e.to_string())?;
    let adam = Adam::new(model.params(), 1e-4);
    let path = dir.path().join("full.ckpt");
    save_model(&path, &model, Some(&adam), None, 0).map_err(|e| e.to_string())?;
    let back = load_model::<f32>(&path).map_err(|e| e.to_string())?;
    let n = model.params().iter().count();
    ensure(back.model.params().iter().count() == n, || {
        "parameter count changed".into()
    })?;
    for ((na, a), (nb, b)) in model.params().iter().zip(back.model.params().iter()) {
        ensure(na == nb && bits_equal(a, b), || format!("{na} differs after reload"))?;
    }

    let (content_dir, style_dir) = write_dataset(dir.path(), 4, 56);
    let cfg = |out: &str| TrainConfig {
        content_dir: content_dir.clone(),
        style_dir: style_dir.clone(),
        out_dir: dir.path().join(out),
        iterations: 4,
        batch: 2,
        resize: 48,
        crop: 48,
        width_divisor: 8,
        n_g: 2,
        checkpoint_every: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let full = train_loop(&cfg("full"), None).map_err(|e| e.to_string())?;
    let resumed = train_loop(&cfg("resumed"), Some(&dir.path().join("full").join(checkpoint_name(2))))
        .map_err(|e| e.to_string())?;
    let a = load_model::<f32>(&full.final_checkpoint).map_err(|e| e.to_string())?;
    let b = load_model::<f32>(&resumed.final_checkpoint).map_err(|e| e.to_string())?;
    for ((na, x), (_, y)) in a.model.params().iter().zip(b.model.params().iter()) {
        ensure(bits_equal(x, y), || {
            format!("{na} differs between resumed and uninterrupted runs")
        })?;
    }
    ensure(a.adam == b.adam, || "optimizer state differs after resume".into())?;
    let la = read_log(&dir.path().join("full").join(LOG_FILE)).map_err(|e| e.to_string())?;
    let lb = read_log(&dir.path().join("resumed").join(LOG_FILE)).map_err(|e| e.to_string())?;
    ensure(
        lb.len() == 2
            && lb
                .iter()
                .zip(&la[2..])
                .all(|(x, y)| x.iteration == y.iteration && x.total.to_bits() == y.total.to_bits()),
        || "resumed log does not match steps 3-4".into(),
    )?;
    ensure(dir.path().join("resumed").join(FINAL_CHECKPOINT).is_file(), || {
        "no final checkpoint".into()
    })?;
    Ok(format!(
        "{n} tensors of the full model reload bitwise; resume at step 2 of 4 matches bitwise"
    ))
}
