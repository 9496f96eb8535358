use std::collections::HashMap;

use dsscc_autodiff::{Graph, Optimizer, OptimizerState, Tensor};
use dsscc_core::codec::{self, CodecConfig, CodecModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_images(n: usize, cfg: &CodecConfig, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&cfg.image_shape(n), |_| rng.gen_range(0.0f32..255.0))
}

#[test]
fn default_shapes() {
    let cfg = CodecConfig::default();
    let mut m = CodecModel::new(cfg.clone(), 1).unwrap();
    let x = random_images(2, &cfg, 1);
    let y = m.analyze(&x).unwrap();
    assert_eq!(y.shape(), &[2, 8, 8, 48]);
    assert_eq!(y.len() / 2, 3072);
    let z = m.hyper_analyze(&y).unwrap();
    assert_eq!(z.shape(), &[2, 2, 2, 32]);
    assert_eq!(z.len() / 2, 128);
    let sigma = m.hyper_synthesize(&z.map(f32::round)).unwrap();
    assert_eq!(sigma.shape(), y.shape());
    assert_eq!(m.synthesize(&y).unwrap().shape(), x.shape());
    assert_eq!(cfg.source_dim(), 3072);
}

#[test]
fn large_input_gives_a_quarter_resolution_grid() {
    let cfg = CodecConfig { height: 224, width: 224, filters: 8, y_channels: 8, z_channels: 4, ..Default::default() };
    let mut m = CodecModel::new(cfg.clone(), 1).unwrap();
    let y = m.analyze(&random_images(1, &cfg, 2)).unwrap();
    assert_eq!(&y.shape()[1..3], &[56, 56]);
}

#[test]
fn zero_image_maps_to_zero_features() {
    let cfg = CodecConfig::default();
    let mut m = CodecModel::new(cfg.clone(), 3).unwrap();
    let y = m.analyze(&Tensor::zeros(&cfg.image_shape(1))).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn outputs_respect_their_ranges() {
    let cfg = CodecConfig::default();
    let mut m = CodecModel::new(cfg.clone(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = Tensor::from_fn(&cfg.y_shape(3), |_| rng.gen_range(-50.0f32..50.0).round());
    let x_hat = m.synthesize(&y).unwrap();
    assert!(x_hat.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
    let z = Tensor::from_fn(&cfg.z_shape(3), |_| rng.gen_range(-100.0f32..100.0).round());
    let sigma = m.hyper_synthesize(&z).unwrap();
    assert!(sigma.data().iter().all(|&s| s >= cfg.sigma_floor));
}

#[test]
fn classifier_outputs_distributions() {
    let cfg = CodecConfig::default();
    let mut m = CodecModel::new(cfg.clone(), 6).unwrap();
    let p = m.classify(&random_images(100, &cfg, 7)).unwrap();
    assert_eq!(p.shape(), &[100, 10]);
    for row in p.data().chunks(10) {
        assert!(row.iter().all(|&v| v >= 0.0));
        assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
    }
    for n in ["gamma.dense.w", "gamma.dense.b"] {
        m.params.get_mut(n).unwrap().data_mut().fill(0.0);
    }
    let p = m.classify(&random_images(2, &cfg, 8)).unwrap();
    assert!(p.data().iter().all(|&v| (v - 0.1).abs() < 1e-7));
}

#[test]
fn wrong_shapes_are_rejected() {
    let cfg = CodecConfig::default();
    let mut m = CodecModel::new(cfg.clone(), 1).unwrap();
    assert!(m.analyze(&Tensor::zeros(&[1, 16, 16, 3])).is_err());
    assert!(m.synthesize(&Tensor::zeros(&[1, 8, 8, 47])).is_err());
    assert!(CodecConfig { height: 40, ..Default::default() }.validate().is_err());
    assert!(CodecConfig { sigma_floor: 0.0, ..Default::default() }.validate().is_err());
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let cfg = CodecConfig::default();
    let mut m = CodecModel::new(cfg.clone(), 11).unwrap();
    let x = random_images(2, &cfg, 12);
    let before = (m.analyze(&x).unwrap(), m.classify(&x).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.save(&path).unwrap();
    let mut back = CodecModel::load(cfg.clone(), &path).unwrap();
    assert!(back.analyze(&x).unwrap().bitwise_eq(&before.0));
    assert!(back.classify(&x).unwrap().bitwise_eq(&before.1));
    assert_eq!(back.digest(&codec::CODEC_PREFIXES), m.digest(&codec::CODEC_PREFIXES));
    let other = CodecConfig { y_channels: 40, ..cfg };
    assert!(CodecModel::load(other, &path).is_err());
}

#[test]
fn small_classifier_separates_two_blob_classes() {
    let cfg = CodecConfig { classes: 2, ..Default::default() };
    let mut params = codec::init_params(&cfg, 2).unwrap();
    params.freeze_all(true);
    params.freeze_prefix("gamma", false);
    let mut g = Graph::new();
    let x = g.input("x");
    let labels = g.input("labels");
    let logits = codec::classifier_logits(&mut g, x);
    let loss = g.softmax_cross_entropy(logits, labels);
    g.set_output("logits", logits);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 64;
    // Class 0: bright blob top-left; class 1: bright blob bottom-right.
    let mut images = Vec::with_capacity(n * 32 * 32 * 3);
    let mut lab = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let (cy, cx) = if c == 0 { (9.0, 9.0) } else { (22.0, 22.0) };
        for py in 0..32 {
            for px in 0..32 {
                let d2 = (py as f32 - cy).powi(2) + (px as f32 - cx).powi(2);
                let v = 40.0 + 180.0 * (-d2 / 30.0).exp() + rng.gen_range(-20.0f32..20.0);
                images.extend([v, v, v]);
            }
        }
        lab.push(c as f32);
    }
    let data = Tensor::from_slice(&[n, 32, 32, 3], &images);
    let mut opt = OptimizerState::new(Optimizer::adam(1e-3));
    let mut acc = 0.0;
    for step in 0..500 {
        let idx: Vec<usize> = (0..8).map(|k| (step * 8 + k) % n).collect();
        let bx = Tensor::stack_batch(&idx.iter().map(|&i| data.batch_item(i).unwrap()).collect::<Vec<_>>()).unwrap();
        let bl = Tensor::from_slice(&[8], &idx.iter().map(|&i| lab[i]).collect::<Vec<_>>());
        let feed = HashMap::from([("x".to_string(), bx), ("labels".to_string(), bl)]);
        g.forward(&params, &feed).unwrap();
        opt.step(&mut params, &g.backward(loss).unwrap()).unwrap();
        if step + 1 == 500 {
            let feed = HashMap::from([("x".to_string(), data.clone()), ("labels".to_string(), Tensor::from_slice(&[n], &lab))]);
            let out = g.forward(&params, &feed).unwrap();
            let l = &out["logits"];
            acc = (0..n).filter(|&i| (l.data()[2 * i + 1] > l.data()[2 * i]) == (lab[i] == 1.0)).count() as f64 / n as f64;
        }
    }
    assert!(acc > 0.95, "train accuracy {acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn shapes_are_consistent_for_valid_configs(h in 1usize..4, w in 1usize..4, cy in 1usize..6, cz in 1usize..6, f in 1usize..6) {
        let cfg = CodecConfig { height: 16 * h, width: 16 * w, y_channels: cy, z_channels: cz, filters: f, classifier_filters: 2, ..Default::default() };
        cfg.validate().unwrap();
        let mut m = CodecModel::new(cfg.clone(), 1).unwrap();
        let x = random_images(1, &cfg, 0);
        let y = m.analyze(&x).unwrap();
        prop_assert_eq!(y.shape(), &cfg.y_shape(1));
        let z = m.hyper_analyze(&y).unwrap();
        prop_assert_eq!(z.shape(), &cfg.z_shape(1));
        let s = m.hyper_synthesize(&z.map(f32::round)).unwrap();
        prop_assert_eq!(s.shape(), y.shape());
        prop_assert!(s.data().iter().all(|&v| v >= cfg.sigma_floor));
        let x_hat = m.synthesize(&y).unwrap();
        prop_assert_eq!(x_hat.shape(), x.shape());
        let p = m.classify(&x).unwrap();
        prop_assert_eq!(p.shape(), &[1, cfg.classes]);
    }
}
