use cloak_core::nn::layers::Layer;
use cloak_core::nn::{
    conv1d, fit, maxpool1d, Batch, Example, LayerSpec, Mode, Network, Shape, Target, Tensor,
    TrainConfig,
};
use cloak_core::seed;
use proptest::prelude::*;
use rand::Rng;

fn random(n: usize, s: u64) -> Vec<f64> {
    let mut r = seed::rng(s);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn naive_conv(x: &[f64], c: usize, len: usize, w: &[f64], b: &[f64], f: usize, k: usize, stride: usize) -> Vec<f64> {
    let out_len = (len - k) / stride + 1;
    let mut out = vec![0.0; f * out_len];
    for fi in 0..f {
        for t in 0..out_len {
            let mut acc = b[fi];
            for ci in 0..c {
                for ki in 0..k {
                    acc += w[(fi * c + ci) * k + ki] * x[ci * len + t * stride + ki];
                }
            }
            out[fi * out_len + t] = acc;
        }
    }
    out
}

#[test]
fn conv1d_examples() {
    let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let k = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
    assert_eq!(conv1d(&x, &k, &[0.0], 1).unwrap().data(), &[3.0, 5.0]);
    let id = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
    assert_eq!(conv1d(&x, &id, &[0.0], 1).unwrap().data(), x.data());
    let long = Tensor::new(vec![1, 1, 4], vec![1.0; 4]).unwrap();
    assert!(conv1d(&x, &long, &[0.0], 1).is_err());
}

#[test]
fn conv1d_matches_naive_exactly() {
    for (stride, s) in [(1, 1), (2, 2), (3, 3)] {
        let (c, len, f, k) = (2, 32, 3, 5);
        let x = random(c * len, s);
        let w = random(f * c * k, s + 10);
        let b = random(f, s + 20);
        let out = conv1d(
            &Tensor::new(vec![c, len], x.clone()).unwrap(),
            &Tensor::new(vec![f, c, k], w.clone()).unwrap(),
            &b,
            stride,
        )
        .unwrap();
        assert_eq!(out.data(), naive_conv(&x, c, len, &w, &b, f, k, stride).as_slice());
        assert_eq!(out.shape(), &[f, (len - k) / stride + 1]);
    }
}

#[test]
fn maxpool_examples_and_naive() {
    let x = Tensor::new(vec![1, 4], vec![1.0, 3.0, 2.0, 8.0]).unwrap();
    let (y, idx) = maxpool1d(&x, 2).unwrap();
    assert_eq!(y.data(), &[3.0, 8.0]);
    assert_eq!(idx, vec![1, 3]);
    let c = Tensor::new(vec![1, 6], vec![0.5; 6]).unwrap();
    let (y, idx) = maxpool1d(&c, 3).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5]);
    assert_eq!(idx, vec![0, 3]);
    assert!(maxpool1d(&x, 0).is_err());

    let (ch, len, w) = (3, 47, 5);
    let data = random(ch * len, 9);
    let (y, _) = maxpool1d(&Tensor::new(vec![ch, len], data.clone()).unwrap(), w).unwrap();
    let mut naive = Vec::new();
    for c in 0..ch {
        for t in 0..len / w {
            naive.push(data[c * len + t * w..c * len + t * w + w].iter().cloned().fold(f64::MIN, f64::max));
        }
    }
    assert_eq!(y.data(), naive.as_slice());
}

fn one_layer(spec: LayerSpec, input: Shape) -> Network {
    Network::from_specs(input, &[spec], 3).unwrap()
}

/// `<u, J v>` (central differences) against `<Jᵀ u, v>` (backward pass).
fn adjoint_gap(net: &Network, n: usize, mode: Mode, s: u64) -> f64 {
    let input = net.input_shape();
    let x = Batch { n, shape: input, data: random(n * input.size(), s) };
    let v = random(x.data.len(), s + 1);
    let pass = net.forward(x.clone(), mode).unwrap();
    let out = pass.logits().clone();
    let u = random(out.data.len(), s + 2);
    let jt_u = net.backward(&pass, Batch { n, shape: out.shape, data: u.clone() }, true, None).unwrap();
    let h = 1e-5;
    let shifted = |sign: f64| {
        let data = x.data.iter().zip(&v).map(|(a, b)| a + sign * h * b).collect();
        net.forward(Batch { n, shape: input, data }, mode).unwrap().logits().data.clone()
    };
    let (up, down) = (shifted(1.0), shifted(-1.0));
    let jv: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let lhs: f64 = u.iter().zip(&jv).map(|(a, b)| a * b).sum();
    let rhs: f64 = jt_u.data.iter().zip(&v).map(|(a, b)| a * b).sum();
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)
}

#[test]
fn adjoint_test_every_layer() {
    let cases = [
        (LayerSpec::conv(4, 5), Shape::new(2, 30)),
        (LayerSpec::Conv1d { filters: 3, kernel: 4, stride: 3 }, Shape::new(2, 29)),
        (LayerSpec::MaxPool1d { window: 4 }, Shape::new(3, 22)),
        (LayerSpec::batch_norm(), Shape::new(3, 11)),
        (LayerSpec::Dropout { rate: 0.25 }, Shape::new(2, 16)),
        (LayerSpec::Flatten, Shape::new(3, 7)),
        (LayerSpec::Dense { units: 6 }, Shape::new(2, 9)),
        (LayerSpec::SoftmaxOutput { classes: 4 }, Shape::new(10, 1)),
    ];
    for (i, (spec, shape)) in cases.into_iter().enumerate() {
        let net = one_layer(spec, shape);
        for mode in [Mode::Infer, Mode::Train { seed: 17 }] {
            let gap = adjoint_gap(&net, 4, mode, 100 + i as u64);
            assert!(gap < 1e-6, "{spec} {mode:?}: gap {gap}");
        }
    }
}

#[test]
fn batchnorm_examples() {
    let shape = Shape::new(2, 5);
    let mut net = one_layer(LayerSpec::batch_norm(), shape);
    let x = Batch { n: 6, shape, data: random(60, 4).iter().map(|v| 3.0 * v + 1.0).collect() };
    let pass = net.forward(x.clone(), Mode::Train { seed: 0 }).unwrap();
    let y = pass.logits();
    for c in 0..2 {
        let vals: Vec<f64> = (0..6).flat_map(|n| y.sample(n)[c * 5..c * 5 + 5].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / 30.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-4, "mean {mean} var {var}");
    }
    // One-sample batches cannot be standardized.
    let single = Batch { n: 1, shape, data: x.data[..10].to_vec() };
    assert!(net.forward(single, Mode::Train { seed: 0 }).is_err());

    // Running stats after one update, then inference is the closed-form affine map.
    net.apply_batch_stats(&pass);
    let Layer::BatchNorm(bn) = &net.layers()[0] else { unreachable!() };
    let out = net.forward(x.clone(), Mode::Infer).unwrap();
    for n in 0..6 {
        for c in 0..2 {
            for t in 0..5 {
                let i = c * 5 + t;
                let expect = (x.sample(n)[i] - bn.running_mean[c]) / (bn.running_var[c] + 1e-5).sqrt();
                assert!((out.logits().sample(n)[i] - expect).abs() < 1e-12);
            }
        }
    }
    assert!((bn.running_var[0] - (0.99 + 0.01 * 9.0 * 0.33)).abs() < 0.05);
}

#[test]
fn batchnorm_degenerate_gain() {
    let shape = Shape::new(1, 4);
    let mut net = one_layer(LayerSpec::batch_norm(), shape);
    for p in net.params_mut() {
        if p.len() == 1 && p[0] == 1.0 {
            p[0] = 0.0;
        } else {
            p[0] = 5.0;
        }
    }
    let x = Batch { n: 3, shape, data: random(12, 8) };
    let y = net.forward(x, Mode::Train { seed: 1 }).unwrap();
    assert!(y.logits().data.iter().all(|&v| v == 5.0));
}

#[test]
fn dropout_inference_is_identity() {
    let shape = Shape::new(1, 50);
    let net = one_layer(LayerSpec::Dropout { rate: 0.5 }, shape);
    let x = Batch { n: 2, shape, data: random(100, 5) };
    assert_eq!(net.forward(x.clone(), Mode::Infer).unwrap().logits(), &x);
    let train = net.forward(x.clone(), Mode::Train { seed: 2 }).unwrap();
    let kept = train.logits().data.iter().filter(|v| **v != 0.0).count();
    assert!(kept > 20 && kept < 80);
    assert!(train.logits().data.iter().zip(&x.data).all(|(y, x)| *y == 0.0 || (*y - 2.0 * x).abs() < 1e-15));
}

fn small_cnn(seed: u64) -> Network {
    let specs = [
        LayerSpec::conv(4, 5),
        LayerSpec::MaxPool1d { window: 3 },
        LayerSpec::batch_norm(),
        LayerSpec::Dropout { rate: 0.25 },
        LayerSpec::conv(6, 3),
        LayerSpec::MaxPool1d { window: 2 },
        LayerSpec::batch_norm(),
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 12 },
        LayerSpec::SoftmaxOutput { classes: 5 },
    ];
    Network::from_specs(Shape::new(1, 64), &specs, seed).unwrap()
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut net = small_cnn(4);
    // Move the running statistics away from their defaults.
    let batch = Batch { n: 8, shape: net.input_shape(), data: random(8 * 64, 21) };
    let pass = net.forward(batch, Mode::Train { seed: 1 }).unwrap();
    net.apply_batch_stats(&pass);
    for s in 0..5 {
        let x: Vec<f64> = random(64, 200 + s).iter().map(|v| 0.5 + 0.4 * v).collect();
        let label = s as usize % 5;
        let g = net.loss_input_gradient(&x, label).unwrap();
        let fd = net.finite_diff_gradient(&x, label, 1e-6).unwrap();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err / scale <= 1e-4, "relative error {}", err / scale);
    }
    assert!(matches!(net.finite_diff_gradient(&[0.5; 64], 0, 0.0), Err(cloak_core::Error::DegenerateStep)));
}

#[test]
fn linear_softmax_gradient_is_closed_form() {
    let mut net = Network::from_specs(Shape::new(1, 4), &[LayerSpec::SoftmaxOutput { classes: 3 }], 0).unwrap();
    let w = random(12, 30);
    let b = random(3, 31);
    {
        let mut p = net.params_mut();
        p[0].copy_from_slice(&w);
        p[1].copy_from_slice(&b);
    }
    let x = [0.1, 0.7, 0.3, 0.9];
    let z: Vec<f64> = (0..3).map(|o| b[o] + (0..4).map(|i| w[o * 4 + i] * x[i]).sum::<f64>()).collect();
    let mut p = cloak_core::nn::softmax_t(&z, 1.0).unwrap();
    p[2] -= 1.0;
    let g = net.loss_input_gradient(&x, 2).unwrap();
    for i in 0..4 {
        let expect: f64 = (0..3).map(|o| w[o * 4 + i] * p[o]).sum();
        assert!((g[i] - expect).abs() < 1e-14);
    }
    let fd = net.finite_diff_gradient(&x, 2, 1e-4).unwrap();
    for (a, b) in g.iter().zip(&fd) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn stride_truncated_tail_gets_no_gradient() {
    let specs = [
        LayerSpec::Conv1d { filters: 2, kernel: 3, stride: 3 },
        LayerSpec::Flatten,
        LayerSpec::SoftmaxOutput { classes: 2 },
    ];
    let net = Network::from_specs(Shape::new(1, 11), &specs, 5).unwrap();
    let g = net.loss_input_gradient(&random(11, 6), 1).unwrap();
    assert_eq!(&g[9..], &[0.0, 0.0]);
    assert!(g[..9].iter().any(|v| *v != 0.0));
}

#[test]
fn shape_errors_name_the_layer() {
    let specs = [LayerSpec::conv(4, 5), LayerSpec::MaxPool1d { window: 10 }, LayerSpec::conv(3, 7)];
    let err = Network::<f64>::from_specs(Shape::new(1, 40), &specs, 0).unwrap_err().to_string();
    assert!(err.contains("layer 3") && err.contains("Conv1d(3, 7)"), "{err}");
}

fn toy_set() -> (Vec<Vec<f64>>, Vec<Target<f64>>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..10 {
        let label = i % 2;
        let base = if label == 0 { 0.2 } else { 0.7 };
        xs.push(random(64, 300 + i as u64).iter().map(|v| base + 0.1 * v).collect());
        ys.push(Target::Hard(label));
    }
    (xs, ys)
}

#[test]
fn toy_training_loss_decreases() {
    let (xs, ys) = toy_set();
    let examples: Vec<Example<f64>> = xs.iter().zip(&ys).map(|(x, t)| Example { x, target: t }).collect();
    let specs = [LayerSpec::conv(3, 5), LayerSpec::MaxPool1d { window: 4 }, LayerSpec::Flatten, LayerSpec::SoftmaxOutput { classes: 2 }];
    let mut net = Network::from_specs(Shape::new(1, 64), &specs, 1).unwrap();
    let before = cloak_core::nn::evaluate(&net, &examples, 1.0).unwrap().0;
    let cfg = TrainConfig { epochs: 50, batch_size: 10, seed: 2, ..TrainConfig::default() };
    let hist = fit(&mut net, &examples, &examples, &[], &cfg).unwrap();
    assert_eq!(hist.epochs(), 50);
    assert!(hist.train_loss[49] < hist.train_loss[0]);
    assert!(hist.val_loss[49] < before);
}

#[test]
fn training_is_deterministic_and_rejects_zero_epochs() {
    let (xs, ys) = toy_set();
    let examples: Vec<Example<f64>> = xs.iter().zip(&ys).map(|(x, t)| Example { x, target: t }).collect();
    let run = || {
        let mut net = small_cnn(8);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, seed: 9, ..TrainConfig::default() };
        let h = fit(&mut net, &examples, &examples, &[], &cfg).unwrap();
        (net, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    let mut net = small_cnn(8);
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    assert!(fit(&mut net, &examples, &examples, &[], &cfg).is_err());
}

#[test]
fn json_round_trip_preserves_predictions() {
    let mut net = small_cnn(12);
    let batch = Batch { n: 8, shape: net.input_shape(), data: random(8 * 64, 40) };
    let pass = net.forward(batch, Mode::Train { seed: 1 }).unwrap();
    net.apply_batch_stats(&pass);
    net.temperature = 2.5;
    let text = serde_json::to_string(&net.to_json()).unwrap();
    let back = Network::<f64>::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, net);
    let x = random(64, 41);
    assert_eq!(back.predict_proba(&x).unwrap(), net.predict_proba(&x).unwrap());
    let f32net: Network<f32> = net.cast();
    let p32 = f32net.predict_proba(&x.iter().map(|v| *v as f32).collect::<Vec<_>>()).unwrap();
    assert!((p32.iter().sum::<f32>() - 1.0).abs() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn probabilities_sum_to_one(s in 0u64..1000) {
        let net = small_cnn(s);
        let x: Vec<f64> = random(64, s).iter().map(|v| 0.5 + 0.5 * v).collect();
        let p = net.predict_proba(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn conv_matches_naive_random_geometry(c in 1usize..4, len in 5usize..40, f in 1usize..4, k in 1usize..5, stride in 1usize..4, s in 0u64..100) {
        let x = random(c * len, s);
        let w = random(f * c * k, s + 1);
        let b = random(f, s + 2);
        let out = conv1d(&Tensor::new(vec![c, len], x.clone()).unwrap(), &Tensor::new(vec![f, c, k], w.clone()).unwrap(), &b, stride).unwrap();
        let naive = naive_conv(&x, c, len, &w, &b, f, k, stride);
        prop_assert_eq!(out.data(), naive.as_slice());
    }
}
