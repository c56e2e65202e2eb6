mod common;

use nbvlab_core::classify::*;
use nbvlab_core::nn::Checkpoint;
use nbvlab_core::render::{generate_image_set, Camera, Image, Split};
use nbvlab_core::scene::{object, GripperSpec, Mode, WorkspaceBox};
use proptest::prelude::*;

fn tiny() -> ClassifierConfig {
    ClassifierConfig {
        groups: vec![1, 2],
        widths: vec![3, 5],
        n_classes: 3,
        input: 8,
        ..ClassifierConfig::default()
    }
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..3 {
        let cfg = common::random_small_config(seed);
        let (worst, count) = common::classifier_grad_check(&cfg, seed, 3, 1e-5);
        assert!(count <= 5000, "{count} parameters");
        assert!(worst <= 1e-4, "seed {seed}: relative error {worst:e}");
    }
}

#[test]
fn zero_weights_give_uniform_confidences() {
    let mut m = Classifier::<f64>::new(tiny(), 3).unwrap();
    for i in 0..m.params().len() {
        let name = m.params().block(i).name.clone();
        if name.starts_with("fc.") {
            m.params_mut().data_mut(i).fill(0.0);
        }
    }
    let img = Image::filled(8, 8, 90);
    let c = m.forward(&img).unwrap();
    for v in &c {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    let loss = m.loss_and_gradients(&[&img], &[1]).unwrap().loss;
    assert!((loss - 3f64.ln()).abs() < 1e-9);
}

#[test]
fn inference_is_deterministic_and_normalized() {
    let m = Classifier::<f32>::new(tiny(), 9).unwrap();
    let img = Image { width: 8, height: 8, pixels: (0..64).map(|i| (i * 4) as u8).collect() };
    let a = m.forward(&img).unwrap();
    assert_eq!(a, m.forward(&img).unwrap());
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(m.forward(&Image::filled(16, 16, 0)).is_err());
}

#[test]
fn feature_width_is_final_channel_count() {
    let m = Classifier::<f32>::new(ClassifierConfig { input: 16, ..ClassifierConfig::default() }, 1).unwrap();
    assert_eq!(m.extract_features(&Image::filled(16, 16, 128)).unwrap().len(), 128);
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let m = Classifier::<f64>::new(tiny(), 4).unwrap();
    let bytes = m.to_checkpoint().to_bytes();
    let back = Classifier::<f64>::from_checkpoint(&Checkpoint::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
    assert_eq!(back.params().max_abs_diff(m.params()), 0.0);
    assert_eq!(back.config().groups, m.config().groups);
}

#[test]
fn training_is_deterministic_and_init_is_transferred() {
    let objs: Vec<_> = (1..=3).map(|i| (i, object(i).unwrap())).collect();
    let cam = Camera { width: 16, height: 16, ..Camera::default() };
    let set = generate_image_set(&objs, Mode::Objects, 10, &cam, &GripperSpec::default(), &WorkspaceBox::default(), 2).unwrap();
    let cfg = ClassifierConfig { input: 16, epochs: 2, batch_size: 8, ..tiny() };
    let (a, log_a) = train_classifier::<f64>(&cfg, &set, None).unwrap();
    let (b, log_b) = train_classifier::<f64>(&cfg, &set, None).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(a.params().max_abs_diff(b.params()), 0.0);
    assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());

    // Zero epochs of fine-tuning is impossible; one epoch from `a` must start
    // from `a`'s weights, so its first logged loss differs from scratch.
    let one = ClassifierConfig { epochs: 1, ..cfg.clone() };
    let (_, tuned) = train_classifier::<f64>(&one, &set, Some(&a)).unwrap();
    let (_, scratch) = train_classifier::<f64>(&one, &set, None).unwrap();
    assert_ne!(tuned[0].train_loss, scratch[0].train_loss);

    let e = evaluate_classifier(&a, &set, Split::Test).unwrap();
    assert_eq!(e.samples, set.manifest.count(Split::Test));
    for row in &e.confusion {
        let s: f64 = row.iter().sum();
        assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
    }
}

fn brute_force_cdiff(conf: &[f64], target: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (i, &c) in conf.iter().enumerate() {
        if i != target && c > best {
            best = c;
        }
    }
    conf[target] - best
}

proptest! {
    #[test]
    fn confidence_difference_matches_linear_scan(raw in prop::collection::vec(0.0f64..1.0, 2..12), t in 0usize..12) {
        let s: f64 = raw.iter().sum::<f64>() + 1e-9;
        let conf: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / s).collect();
        let target = t % conf.len();
        let d = confidence_difference(&conf, target).unwrap();
        prop_assert_eq!(d, brute_force_cdiff(&conf, target));
        prop_assert_eq!(d < 0.0, argmax(&conf) != target && conf.iter().any(|&c| c > conf[target]));
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 2..10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn confidence_difference_rejects_bad_input() {
    assert!(confidence_difference(&[1.0], 0).is_err());
    assert!(confidence_difference(&[0.5, 0.5], 2).is_err());
}
