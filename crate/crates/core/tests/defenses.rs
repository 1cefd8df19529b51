use cloak_core::attacks::{adversarial_set, attack_indices, correct_per_class, evaluate_attack, AttackKind, AttackParams};
use cloak_core::classifiers::cnn::examples;
use cloak_core::classifiers::{accuracy, build_cnn, train_cnn, Classifier, CnnConfig};
use cloak_core::dataset::{Dataset, NormStats, Split};
use cloak_core::defenses::*;
use cloak_core::nn::{fit, Network, Target, TrainConfig};
use cloak_core::synth::{generate_dataset, GenConfig};
use cloak_core::Error;
use proptest::prelude::*;

fn dataset_of(per_class: usize) -> Dataset<f64> {
    let g = GenConfig { n_classes: 6, n_counters: 3, n_samples: 60, noise_std: 0.02, seed: 11, interval_us: 10 };
    generate_dataset::<f64>(&g, per_class).unwrap()
}

fn dataset() -> Dataset<f64> {
    dataset_of(40)
}

fn arch() -> CnnConfig {
    CnnConfig {
        input_len: 180,
        conv1_filters: 8,
        conv1_k: 5,
        pool: 2,
        conv2_filters: 8,
        conv2_k: 5,
        dense: 32,
        dropout: 0.25,
        n_classes: 6,
    }
}

fn trained(ds: &Dataset<f64>) -> Network<f64> {
    let net = build_cnn(&arch(), 3).unwrap();
    train_cnn(&net, ds, &TrainConfig { epochs: 8, seed: 4, ..TrainConfig::default() }).unwrap().0
}

#[test]
fn invalidation_rate_edges() {
    let ds = dataset();
    let net = trained(&ds);
    assert!(matches!(invalidation_rate(&net, &[]), Err(Error::EmptyAdversarialSet)));

    let (_, outcomes) = evaluate_attack(&net, &ds, Split::Test, AttackKind::Gsa, &AttackParams::default(), 10).unwrap();
    let adv = adversarial_set(&outcomes);
    assert!(!adv.is_empty());
    assert_eq!(invalidation_rate(&net, &adv).unwrap(), 0.0);

    // Relabel each trace with whatever the model says: a perfect oracle for this set.
    let mut agreed = adv.clone();
    for a in &mut agreed {
        a.label = net.predict(a.trace.values()).unwrap();
    }
    assert_eq!(invalidation_rate(&net, &agreed).unwrap(), 1.0);
}

#[test]
fn retraining_checks_normalization_and_leaves_the_input_alone() {
    let ds = dataset();
    let net = trained(&ds);
    let mut other = net.clone();
    other.norm_stats = Some(NormStats { ranges: vec![(0.0, 1.0); 3] });
    let cfg = TrainConfig { epochs: 1, seed: 9, ..TrainConfig::default() };
    assert!(matches!(adversarial_retrain(&other, &ds, &[], &cfg), Err(Error::NormStatsMismatch)));

    let before = net.clone();
    let (hard, _) = adversarial_retrain(&net, &ds, &[], &cfg).unwrap();
    assert_eq!(net, before);
    assert_ne!(hard, net);
}

#[test]
fn empty_adversarial_set_is_plain_continued_training() {
    let ds = dataset();
    let net = trained(&ds);
    let cfg = TrainConfig { epochs: 2, seed: 13, ..TrainConfig::default() };
    let (a, ha) = adversarial_retrain(&net, &ds, &[], &cfg).unwrap();
    let mut b = net.clone();
    let (tx, ty): (Vec<&[f64]>, Vec<Target<f64>>) =
        ds.split(Split::Train).map(|t| (t.trace.values(), Target::Hard(t.label))).unzip();
    let (vx, vy): (Vec<&[f64]>, Vec<Target<f64>>) =
        ds.split(Split::Val).map(|t| (t.trace.values(), Target::Hard(t.label))).unzip();
    let hb = fit(&mut b, &examples(&tx, &ty), &examples(&vx, &vy), &[], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
}

#[test]
fn gsa_retraining_invalidates_earlier_gsa_traces() {
    let ds = dataset();
    let net = trained(&ds);
    let params = AttackParams::default().with_seed(2);
    let (_, held_out) = evaluate_attack(&net, &ds, Split::Test, AttackKind::Gsa, &params, 24).unwrap();
    let old = adversarial_set(&held_out);
    assert!(!old.is_empty());

    let idx = correct_per_class(&net, &ds, Split::Train, 20).unwrap();
    let crafted = attack_indices(&net, &ds, Split::Train, AttackKind::Gsa, &params, &idx).unwrap();
    let adv = adversarial_set(&crafted);
    let cfg = TrainConfig { epochs: 3, seed: 5, ..TrainConfig::default() };
    let (hard, _) = adversarial_retrain(&net, &ds, &adv, &cfg).unwrap();
    let rate = invalidation_rate(&hard, &old).unwrap();
    assert!(rate >= 0.5, "invalidation {rate}");
    let before = accuracy(&net, &ds, Split::Val).unwrap();
    let after = accuracy(&hard, &ds, Split::Val).unwrap();
    assert!(after >= before - 0.02, "{after} vs {before}");
}

#[test]
fn distillation_contract() {
    // Enough batches for the batch-norm running statistics to settle.
    let ds = dataset_of(150);
    let cfg = DistillConfig { temperature: 1.0, teacher_epochs: 10, student_epochs: 30, seed: 7 };
    let d = distill(&ds, &arch(), &cfg).unwrap();
    assert_eq!(d.teacher.n_params(), d.student.n_params());
    assert_eq!(d.student.temperature, 1.0);
    let t_acc = accuracy(&d.teacher, &ds, Split::Val).unwrap();
    let s_acc = accuracy(&d.student, &ds, Split::Val).unwrap();
    assert!(t_acc >= 0.95, "teacher {t_acc}");
    assert!((t_acc - s_acc).abs() <= 0.02 + 1e-12, "teacher {t_acc}, student {s_acc}");

    let hot = distill(&ds, &arch(), &DistillConfig { temperature: 20.0, ..cfg }).unwrap();
    assert_eq!(hot.teacher.temperature, 20.0);
    assert_eq!(hot.student.temperature, 1.0);
    let xs: Vec<&[f64]> = ds.split(Split::Val).map(|t| t.trace.values()).collect();
    let cold_h = mean_entropy(&d.teacher, &xs, 1.0).unwrap();
    let hot_h = mean_entropy(&hot.teacher, &xs, 20.0).unwrap();
    assert!(hot_h >= cold_h, "{hot_h} < {cold_h}");
}

#[test]
fn distillation_rejects_bad_temperatures() {
    let ds = dataset();
    for t in [0.0, -1.0, f64::NAN] {
        let cfg = DistillConfig { temperature: t, ..DistillConfig::default() };
        assert!(distill(&ds, &arch(), &cfg).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn entropy_grows_with_temperature(seed in 0u64..500) {
        let net = build_cnn::<f64>(&arch(), seed).unwrap();
        let ds = dataset();
        let xs: Vec<&[f64]> = ds.split(Split::Val).take(10).map(|t| t.trace.values()).collect();
        let mut last = 0.0;
        for t in TEMPERATURES {
            let h = mean_entropy(&net, &xs, t).unwrap();
            prop_assert!(h >= last - 1e-12);
            prop_assert!(h <= (6f64).ln() + 1e-12);
            last = h;
        }
    }
}
