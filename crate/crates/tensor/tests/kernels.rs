use aesfa_tensor::{
    adaptive_avg_pool, avg_pool2, conv2d, max_pool2, upsample2, ConvSpec, Graph, Tensor, Var, WeightMode,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Direct seven-loop convolution.
fn naive_conv(x: &Tensor<f64>, w: &[f64], wshape: [usize; 4], b: Option<&[f64]>, spec: ConvSpec) -> Tensor<f64> {
    let [n, cin, h, wd] = x.dims4().unwrap();
    let [cout, cin_g, k, _] = wshape;
    let groups = spec.groups;
    let cout_g = cout / groups;
    let ho = (h + 2 * spec.padding - k) / spec.stride + 1;
    let wo = (wd + 2 * spec.padding - k) / spec.stride + 1;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    for s in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for ci in 0..cin_g {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.at4(s, g * cin_g + ci, iy as usize, ix as usize);
                                acc += xv * w[((co * cin_g + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.data_mut()[((s * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    let _ = cin;
    out
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = [
        // (cin, cout, k, stride, pad, groups, h, w)
        (3, 5, 3, 1, 1, 1, 7, 9),
        (4, 6, 3, 2, 1, 2, 8, 8),
        (6, 6, 3, 2, 1, 6, 10, 6),
        (8, 4, 1, 1, 0, 4, 5, 5),
        (2, 3, 3, 1, 0, 1, 3, 3),
        (4, 8, 1, 1, 0, 1, 6, 4),
    ];
    for &(cin, cout, k, stride, pad, groups, h, w) in &cases {
        let spec = ConvSpec::new(stride, pad, groups);
        let x = random(&mut rng, &[2, cin, h, w]);
        let wt = random(&mut rng, &[cout, cin / groups, k, k]);
        let b = random(&mut rng, &[cout]);
        let got = conv2d(&x, &wt, Some(&b), spec, WeightMode::Shared).unwrap();
        let want = naive_conv(&x, wt.data(), [cout, cin / groups, k, k], Some(b.data()), spec);
        assert_eq!(got.shape(), want.shape());
        assert!(
            got.max_abs_diff(&want) < 1e-12,
            "case {:?}",
            (cin, cout, k, stride, pad, groups)
        );
    }
}

#[test]
fn per_sample_conv_uses_each_samples_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = ConvSpec::new(1, 1, 2);
    let x = random(&mut rng, &[3, 4, 5, 5]);
    let w = random(&mut rng, &[3, 6, 2, 3, 3]);
    let b = random(&mut rng, &[3, 6]);
    let got = conv2d(&x, &w, Some(&b), spec, WeightMode::PerSample).unwrap();
    for s in 0..3 {
        let xs = x.batch_item(s).unwrap();
        let ws = &w.data()[s * 108..(s + 1) * 108];
        let bs = &b.data()[s * 6..(s + 1) * 6];
        let want = naive_conv(&xs, ws, [6, 2, 3, 3], Some(bs), spec);
        assert!(got.batch_item(s).unwrap().max_abs_diff(&want) < 1e-12);
    }
}

#[test]
fn large_conv_tiles_agree_with_naive() {
    // Big enough to split the im2col buffer into several row tiles.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = ConvSpec::same(3);
    let x = random(&mut rng, &[1, 130, 96, 96]);
    let w = random(&mut rng, &[2, 130, 3, 3]);
    let got = conv2d(&x, &w, None, spec, WeightMode::Shared).unwrap();
    let want = naive_conv(&x, w.data(), [2, 130, 3, 3], None, spec);
    assert!(got.max_abs_diff(&want) < 1e-9);
}

#[test]
fn pooling_examples() {
    let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(avg_pool2(&x).unwrap().data(), &[2.5]);
    let up = upsample2(&x).unwrap();
    assert_eq!(
        up.data(),
        &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
    );
    let (m, _) = max_pool2(&x).unwrap();
    assert_eq!(m.data(), &[4.0]);
    let odd = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
    assert!(avg_pool2(&odd).is_err());
}

#[test]
fn adaptive_pool_bins_overlap_like_reference() {
    // 5 -> 3 bins: [0,2), [1,4), [3,5)
    let x = Tensor::from_vec(&[1, 1, 1, 5], vec![1.0f64, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let y = adaptive_avg_pool(&x, 1, 3).unwrap();
    assert_eq!(y.data(), &[1.5, 3.0, 4.5]);
}

proptest! {
    #[test]
    fn pool_inverts_upsample(h in 1usize..6, w in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 3, h, w]);
        let back = avg_pool2(&upsample2(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) == 0.0);
    }
}

/// Central-difference check of `d loss / d leaf` for a graph builder.
fn check_grad(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let eval = |ins: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(std::sync::Arc::new(t.clone()))).collect();
        let loss = build(&mut g, &vars);
        (g, vars, loss)
    };
    let (g, vars, loss) = eval(&inputs);
    let grads = g.backward(loss).unwrap();
    let h = 1e-6;
    for (idx, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[idx]).expect("gradient present");
        for e in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[idx].data_mut()[e] += h;
            let mut minus = inputs.clone();
            minus[idx].data_mut()[e] -= h;
            let (gp, _, lp) = eval(&plus);
            let (gm, _, lm) = eval(&minus);
            let fd = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * h);
            let a = analytic.data()[e];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(err < 1e-5, "input {idx} elem {e}: analytic {a} vs fd {fd}");
        }
    }
}

/// Reduces any node to a scalar with a fixed random projection so that every
/// element contributes a distinct weight.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(v).to_vec();
    let w = Tensor::from_fn(&shape, |_| rng.gen_range(0.5..1.5));
    let wv = g.constant(w);
    let d = g.sub(v, wv).unwrap();
    g.norm(d)
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for spec in [
        ConvSpec::new(1, 1, 1),
        ConvSpec::new(2, 1, 2),
        ConvSpec::new(1, 1, 4),
        ConvSpec::new(1, 0, 2),
    ] {
        let k = if spec.padding == 0 { 1 } else { 3 };
        let x = random(&mut rng, &[2, 4, 6, 6]);
        let w = random(&mut rng, &[4, 4 / spec.groups, k, k]);
        let b = random(&mut rng, &[4]);
        check_grad(vec![x, w, b], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), spec).unwrap();
            project(g, y, 1)
        });
    }
}

#[test]
fn per_sample_conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&mut rng, &[2, 4, 5, 5]);
    let w = random(&mut rng, &[2, 4, 2, 3, 3]);
    let b = random(&mut rng, &[2, 4]);
    check_grad(vec![x, w, b], |g, v| {
        let y = g
            .conv2d_per_sample(v[0], v[1], Some(v[2]), ConvSpec::new(1, 1, 2))
            .unwrap();
        project(g, y, 2)
    });
}

#[test]
fn resolution_and_pointwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&mut rng, &[2, 2, 6, 6]);
    check_grad(vec![x], |g, v| {
        let a = g.avg_pool2(v[0]).unwrap();
        let u = g.upsample2(a).unwrap();
        let m = g.max_pool2(v[0]).unwrap();
        let ad = g.adaptive_avg_pool(v[0], 3, 3).unwrap();
        let l = g.leaky_relu(u, 0.2);
        let c = g.clamp(l, -0.3, 0.4);
        let s = g.scale(c, 1.7);
        let aff = g.channel_affine(m, &[2.0, -0.5], &[0.1, 0.2]).unwrap();
        let p1 = project(g, s, 3);
        let p2 = project(g, aff, 4);
        let p3 = project(g, ad, 5);
        let r = g.reshape(v[0], &[2, 72]).unwrap();
        let p4 = project(g, r, 6);
        let b1 = g.select_batch(v[0], 1).unwrap();
        let p5 = project(g, b1, 7);
        let q = g.div(p1, p2).unwrap();
        let t = g.sum(&[q, p3, p4, p5]).unwrap();
        g.add_constant(t, 0.25).unwrap()
    });
}
