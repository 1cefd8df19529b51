use cloak_core::classifiers::*;
use cloak_core::dataset::Split;
use cloak_core::seed;
use cloak_core::synth::{generate_dataset, GenConfig};
use proptest::prelude::*;
use rand::Rng;

fn small_dataset() -> cloak_core::dataset::Dataset<f64> {
    let g = GenConfig { n_classes: 6, n_counters: 3, n_samples: 60, noise_std: 0.02, seed: 11, interval_us: 10 };
    generate_dataset::<f64>(&g, 20).unwrap()
}

fn brute_force(train: &[&[f64]], ys: &[usize], n_classes: usize, q: &[f64], cfg: KnnConfig) -> usize {
    let mut d: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, t)| (cfg.metric.distance(q, t), i)).collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = vec![0.0; n_classes];
    if cfg.weighted {
        if d[0].0 == 0.0 {
            return ys[d[0].1];
        }
        for &(dist, i) in &d[..cfg.k] {
            votes[ys[i]] += 1.0 / dist;
        }
    } else {
        for &(_, i) in &d[..cfg.k] {
            votes[ys[i]] += 1.0;
        }
    }
    let mut best = 0;
    for c in 1..n_classes {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    best
}

#[test]
fn knn_matches_brute_force_on_random_queries() {
    let mut r = seed::rng(5);
    let train: Vec<Vec<f64>> = (0..150).map(|_| (0..8).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
    let ys: Vec<usize> = (0..150).map(|_| r.gen_range(0..4)).collect();
    let refs: Vec<&[f64]> = train.iter().map(|x| &x[..]).collect();
    let queries: Vec<Vec<f64>> = (0..100).map(|_| (0..8).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
    for cfg in [
        KnnConfig::fine(),
        KnnConfig::medium(),
        KnnConfig::coarse(),
        KnnConfig::cosine(),
        KnnConfig::cubic(),
        KnnConfig::weighted(),
    ] {
        let knn = Knn::fit(cfg, &refs, &ys, 4).unwrap();
        for q in &queries {
            assert_eq!(knn.classify(q).unwrap(), brute_force(&refs, &ys, 4, q, cfg), "{cfg:?}");
        }
    }
}

#[test]
fn knn_k1_memorizes_training_set() {
    let ds = small_dataset();
    let (xs, ys) = split_xy(&ds, Split::Train);
    for metric in [Metric::Euclidean, Metric::Cosine, Metric::Cubic] {
        let knn = Knn::fit(KnnConfig { k: 1, metric, weighted: false }, &xs, &ys, ds.n_classes).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(knn.classify(x).unwrap(), *y, "{metric}");
        }
    }
}

#[test]
fn tree_train_accuracy_monotone_in_splits() {
    let ds = small_dataset();
    let mut last = 0.0;
    for max_splits in [1, 2, 3, 5, 8, 20, 100] {
        let m = fit_classical(Family::Tree(TreeConfig { max_splits }), &ds, false, 0, 1).unwrap();
        let acc = accuracy(&m, &ds, Split::Train).unwrap();
        assert!(acc >= last, "{max_splits}: {acc} < {last}");
        last = acc;
    }
    assert_eq!(last, 1.0);
}

#[test]
fn pca_components_orthonormal_and_variance_ordered() {
    let ds = small_dataset();
    let (xs, _) = split_xy(&ds, Split::Train);
    let p = pca_fit(&xs, 0.995).unwrap();
    assert!(p.retained_fraction() >= 0.995);
    for (i, a) in p.components.iter().enumerate() {
        for (j, b) in p.components.iter().enumerate() {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((d - want).abs() < 1e-8, "<c{i}, c{j}> = {d}");
        }
    }
    assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    let z: Vec<f64> = p.transform(&p.mean).unwrap();
    assert!(z.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn pca_reconstruction_keeps_target_variance() {
    let ds = small_dataset();
    let (xs, _) = split_xy(&ds, Split::Train);
    let p = pca_fit(&xs, 0.995).unwrap();
    let n = xs.len() as f64;
    let mut residual = 0.0;
    for x in &xs {
        let back = p.inverse_transform(&p.transform::<f64>(x).unwrap());
        residual += back.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let residual = residual / (n - 1.0);
    assert!(1.0 - residual / p.total_variance >= 0.995 - 1e-9);
}

#[test]
fn pca_line_in_high_dimension_is_rank_one() {
    let dir: Vec<f64> = (0..5000).map(|i| ((i * 31 % 97) as f64 / 97.0) - 0.5).collect();
    let data: Vec<Vec<f64>> = (0..5).map(|t| dir.iter().map(|v| 0.5 + 0.1 * t as f64 * v).collect()).collect();
    let xs: Vec<&[f64]> = data.iter().map(|x| &x[..]).collect();
    let p = pca_fit(&xs, 0.995).unwrap();
    assert_eq!(p.n_components(), 1);
    assert!((p.retained_fraction() - 1.0).abs() < 1e-12);
}

#[test]
fn every_family_round_trips_through_json() {
    let ds = small_dataset();
    let (xs, _) = split_xy(&ds, Split::Test);
    let dir = tempfile::tempdir().unwrap();
    for name in Family::NAMES {
        if name == "knn-coarse" {
            continue; // k = 100 exceeds this training set
        }
        for pca in [false, true] {
            let m: Model<f64> = fit_classical(name.parse().unwrap(), &ds, pca, 3, 20).unwrap().into();
            let path = dir.path().join(format!("{name}-{pca}.json"));
            m.save(&path).unwrap();
            let back = Model::<f64>::load(&path).unwrap();
            assert_eq!(back.kind(), m.kind());
            for x in &xs {
                let (a, b) = (m.predict_proba(x).unwrap(), back.predict_proba(x).unwrap());
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() <= 1e-9, "{name} pca={pca}");
                }
            }
        }
    }
}

#[test]
fn cnn_round_trips_through_model_json() {
    let cfg = CnnConfig {
        input_len: 180,
        conv1_filters: 3,
        conv1_k: 5,
        pool: 2,
        conv2_filters: 4,
        conv2_k: 3,
        dense: 8,
        dropout: 0.25,
        n_classes: 6,
    };
    let net = build_cnn::<f64>(&cfg, 4).unwrap();
    let m = Model::from(net);
    let back = Model::<f64>::from_json(&serde_json::from_str(&serde_json::to_string(&m.to_json()).unwrap()).unwrap())
        .unwrap();
    assert!(back.differentiable().is_some());
    let ds = small_dataset();
    for x in split_xy(&ds, Split::Val).0 {
        let (a, b) = (m.predict_proba(x).unwrap(), back.predict_proba(x).unwrap());
        assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= 1e-9));
    }
}

#[test]
fn only_linear_classical_models_have_gradients() {
    let ds = small_dataset();
    for (name, has) in [("knn-fine", false), ("tree-fine", false), ("linear", true)] {
        let m = fit_classical::<f64>(name.parse().unwrap(), &ds, true, 0, 2).unwrap();
        assert_eq!(m.differentiable().is_some(), has, "{name}");
    }
}

#[test]
fn pca_linear_vjp_matches_finite_differences() {
    let ds = small_dataset();
    let m = fit_classical::<f64>(Family::Linear, &ds, true, 0, 5).unwrap();
    let d = m.differentiable().unwrap();
    let x = split_xy(&ds, Split::Val).0[0].to_vec();
    let cot = vec![0.3, -1.0, 0.0, 0.5, 0.2, -0.1];
    let (_, g) = d.logits_vjp(&x, &mut |_| vec![cot.clone()]).unwrap();
    let f = |x: &[f64]| -> f64 {
        let (z, _) = d.logits_vjp(x, &mut |_| vec![]).unwrap();
        z.iter().zip(&cot).map(|(a, b)| a * b).sum()
    };
    let h = 1e-5;
    for i in (0..x.len()).step_by(7) {
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        assert!((fd - g[0][i]).abs() < 1e-7, "{i}: {fd} vs {}", g[0][i]);
    }
}

#[test]
fn unknown_family_and_bad_model_docs_are_rejected() {
    assert!("svm".parse::<Family>().is_err());
    assert!(Model::<f64>::from_json(&serde_json::json!({"format_version": 9, "kind": "cnn"})).is_err());
    assert!(Model::<f64>::from_json(&serde_json::json!({"format_version": 1, "kind": "forest"})).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cosine_knn_ignores_query_scale(q in prop::collection::vec(0.01f64..1.0, 6), s in 0.1f64..10.0) {
        let mut r = seed::rng(8);
        let train: Vec<Vec<f64>> = (0..30).map(|_| (0..6).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
        let ys: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let refs: Vec<&[f64]> = train.iter().map(|x| &x[..]).collect();
        let knn = Knn::fit(KnnConfig::cosine(), &refs, &ys, 3).unwrap();
        let scaled: Vec<f64> = q.iter().map(|v| v * s).collect();
        prop_assert_eq!(knn.classify(&q).unwrap(), knn.classify(&scaled).unwrap());
    }

    #[test]
    fn tree_leaf_bound(max_splits in 1usize..30) {
        let ds = small_dataset();
        let (xs, ys) = split_xy(&ds, Split::Train);
        let t = tree_fit(&xs, &ys, ds.n_classes, TreeConfig { max_splits }).unwrap();
        prop_assert!(t.n_splits() <= max_splits);
        prop_assert!(t.n_leaves() <= max_splits + 1);
        prop_assert!(t.depth() <= max_splits);
    }
}
