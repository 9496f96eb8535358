use std::collections::HashMap;
use std::sync::Arc;

use dsscc_autodiff::{Graph, Tensor};
use dsscc_core::codec::{self, CLASSIFIER_PREFIX, CODEC_PREFIXES};
use dsscc_core::data::{self, Dataset};
use dsscc_core::entropy::{self, factorized, FactorizedDensity, FactorizedRate, GaussianConditional, GaussianRate};
use dsscc_core::pipeline;
use dsscc_core::quant::NoiseRng;
use dsscc_core::train::{self, LossGraph, Phase, TrainConfig, Trainer};
use dsscc_core::{CodecConfig, CodecModel, CoreError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> TrainConfig {
    TrainConfig { batch1: 8, batch2: 16, epochs1: 1, epochs2: 1, iterations: 1, ..Default::default() }
}

fn trainer(cfg: TrainConfig, seed: u64) -> Trainer {
    Trainer::new(CodecModel::new(CodecConfig::default(), seed).unwrap(), cfg).unwrap()
}

fn batch_inputs(model: &CodecModel, data: &Dataset, idx: &[usize], seed: u64) -> HashMap<String, Tensor> {
    let c = &model.config;
    let mut rng = NoiseRng::new(seed, 0);
    HashMap::from([
        ("x".to_string(), data.batch(idx)),
        ("labels".to_string(), data.batch_labels(idx)),
        ("noise_y".to_string(), rng.noise(&c.y_shape(idx.len()))),
        ("noise_z".to_string(), rng.noise(&c.z_shape(idx.len()))),
        ("rate_scale".to_string(), Tensor::scalar(1.0 / (idx.len() * c.height * c.width) as f32)),
    ])
}

#[test]
fn step1_freezes_the_classifier_and_step2_the_codec() {
    let data = data::synthetic(16, 1);
    let mut t = trainer(small(), 1);
    let (codec0, cls0) = (t.model.digest(&CODEC_PREFIXES), t.model.digest(&[CLASSIFIER_PREFIX]));
    t.step1(&data).unwrap();
    let codec1 = t.model.digest(&CODEC_PREFIXES);
    assert_eq!(t.model.digest(&[CLASSIFIER_PREFIX]), cls0);
    assert_ne!(codec1, codec0);
    t.step2(&data).unwrap();
    assert_eq!(t.model.digest(&CODEC_PREFIXES), codec1);
    assert_ne!(t.model.digest(&[CLASSIFIER_PREFIX]), cls0);
}

#[test]
fn zero_semantic_weight_matches_the_compression_loss() {
    let data = data::synthetic(4, 2);
    let model = CodecModel::new(CodecConfig::default(), 3).unwrap();
    let cfg = TrainConfig { lambda1: 0.0, alpha: 0.3, ..Default::default() };
    let mut params = model.params.clone();
    train::freeze_for(&mut params, Phase::Step1);

    let mut lg = LossGraph::build(&model, &cfg, Phase::Step1);
    let inputs = batch_inputs(&model, &data, &[0, 1, 2, 3], 7);
    lg.graph.forward(&params, &inputs).unwrap();
    let total = lg.graph.output_id("total").unwrap();
    let got = lg.graph.backward(total).unwrap();

    // Rate + alpha * MSE with no classifier at all.
    let mut g = Graph::new();
    let x = g.input("x");
    let ny = g.input("noise_y");
    let nz = g.input("noise_z");
    let scale = g.input("rate_scale");
    let y = codec::analysis(&mut g, x);
    let yt = g.add(y, ny);
    let x_hat = codec::synthesis(&mut g, yt);
    let d = g.sub(x_hat, x);
    let sq = g.square(d);
    let mse = g.mean(sq);
    let z = codec::hyper_analysis(&mut g, y);
    let zt = g.add(z, nz);
    let sigma = codec::hyper_synthesis(&mut g, zt, model.config.sigma_floor);
    let ry = g.custom(Arc::new(GaussianRate), &[yt, sigma]);
    let mut zin = vec![zt];
    zin.extend(factorized::param_names("omega").iter().map(|n| g.param(n)));
    let rz = g.custom(Arc::new(FactorizedRate), &zin);
    let r = g.add(ry, rz);
    let r = g.mul(r, scale);
    let d0 = g.scale(mse, 0.3);
    let loss = g.add(r, d0);
    g.forward(&params, &inputs).unwrap();
    let want = g.backward(loss).unwrap();

    let mut checked = 0;
    for (name, w) in &want.params {
        let a = &got.params[name];
        for (p, q) in a.data().iter().zip(w.data()) {
            let tol = 1e-9 * p.abs().max(q.abs()) as f64;
            assert!(((p - q) as f64).abs() <= tol, "{name}: {p} vs {q}");
        }
        checked += 1;
    }
    assert!(checked > 20);
}

#[test]
fn loss_rates_equal_model_bits_on_the_same_latents() {
    let data = data::synthetic(4, 3);
    let model = CodecModel::new(CodecConfig::default(), 4).unwrap();
    let cfg = TrainConfig::default();
    let mut lg = LossGraph::build(&model, &cfg, Phase::Step1);
    let mut rng = NoiseRng::new(5, 0);
    let parts = lg.loss(&model, &cfg, &data, &[0, 1, 2, 3], &mut rng).unwrap();
    let out = |n: &str| lg.graph.output(n).unwrap().clone();
    let gc = GaussianConditional { sigma_floor: model.config.sigma_floor as f64 };
    let fd = FactorizedDensity::from_params(&model.params, "omega").unwrap();
    let (by, bz) = entropy::rate_bits(&out("y_tilde"), &out("z_tilde"), &out("sigma"), &gc, &fd).unwrap();
    // The graph carries f32 scalars, so agreement is limited by single precision.
    assert!((parts.rate_y * 4.0 - by).abs() <= 1e-6 * by, "{} vs {by}", parts.rate_y * 4.0);
    assert!((parts.rate_z * 4.0 - bz).abs() <= 1e-6 * bz, "{} vs {bz}", parts.rate_z * 4.0);
}

#[test]
fn training_loss_decreases_for_most_seeds() {
    let data = data::synthetic(64, 4);
    let cfg = TrainConfig { batch1: 8, epochs1: 5, ..Default::default() };
    let improved = (1..=3u64)
        .filter(|&s| {
            let mut t = trainer(TrainConfig { seed: s, ..cfg.clone() }, s);
            let log = t.step1(&data).unwrap();
            log[4].total < log[0].total
        })
        .count();
    assert!(improved >= 2, "{improved} of 3 seeds improved");
}

/// Dark versus bright images: separable through any reasonable codec.
fn two_tone(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * data::PIXELS * 3);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let base = if i % 2 == 0 { 40.0 } else { 200.0 };
        images.extend((0..data::PIXELS * 3).map(|_| (base + rng.gen_range(-25.0f32..25.0)) as u8));
        labels.push((i % 2) as u8);
    }
    Dataset { height: 32, width: 32, images, labels }
}

#[test]
fn classifier_step_improves_accuracy_on_a_separable_set() {
    let data = two_tone(64, 5);
    let cfg = TrainConfig { batch1: 8, epochs1: 5, batch2: 16, epochs2: 5, lr_classifier: 3e-3, ..Default::default() };
    let mut t = trainer(cfg, 6);
    // A few codec epochs so reconstructions carry the image brightness.
    t.step1(&data).unwrap();
    let before = pipeline::evaluate(&mut t.model, &data, 32).unwrap().accuracy;
    t.step2(&data).unwrap();
    let after = pipeline::evaluate(&mut t.model, &data, 32).unwrap().accuracy;
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn classifier_batch_may_exceed_the_codec_batch() {
    let data = data::synthetic(40, 6);
    let mut t = trainer(TrainConfig { batch1: 4, batch2: 256, ..small() }, 7);
    t.iterate(&data, None).unwrap();
    assert_eq!(t.log.len(), 2);
}

#[test]
fn zero_iterations_leave_the_model_untouched() {
    let data = data::synthetic(8, 7);
    let mut t = trainer(TrainConfig { iterations: 0, ..small() }, 8);
    let d = t.model.digest(&["phi", "theta", "psi1", "psi2", "omega", "gamma"]);
    t.iterate(&data, None).unwrap();
    assert!(t.log.is_empty());
    assert_eq!(t.model.digest(&["phi", "theta", "psi1", "psi2", "omega", "gamma"]), d);
}

#[test]
fn iterations_emit_one_record_per_epoch_and_checkpoints() {
    let data = data::synthetic(16, 8);
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(TrainConfig { iterations: 2, epochs1: 2, epochs2: 1, ..small() }, 9);
    t.iterate(&data, Some(dir.path())).unwrap();
    assert_eq!(t.log.len(), 6);
    let steps: Vec<Phase> = t.log.iter().map(|r| r.step).collect();
    assert_eq!(steps, [Phase::Step1, Phase::Step1, Phase::Step2, Phase::Step1, Phase::Step1, Phase::Step2]);
    for f in ["model.ckpt", "codec_opt.ckpt", "classifier_opt.ckpt", "state.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv_path = dir.path().join("log.csv");
    t.write_log(&csv_path).unwrap();
    let text = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "iteration,step,epoch,rate_y_bits,rate_z_bits,mse,cross_entropy,total,wall_seconds"
    );
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn resuming_reproduces_the_next_iteration_bitwise() {
    let data = data::synthetic(16, 9);
    let cfg = TrainConfig { iterations: 2, ..small() };
    let mut full = trainer(cfg.clone(), 10);
    full.iterate(&data, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = trainer(TrainConfig { iterations: 1, ..cfg.clone() }, 10);
    first.iterate(&data, Some(dir.path())).unwrap();
    let mut resumed = Trainer::resume(CodecConfig::default(), cfg, dir.path()).unwrap();
    assert_eq!(resumed.iteration, 1);
    resumed.iterate(&data, None).unwrap();

    assert_eq!(resumed.log.len(), full.log.len());
    for (a, b) in resumed.log.iter().zip(&full.log) {
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert_eq!(a.rate_y_bits.to_bits(), b.rate_y_bits.to_bits());
    }
    let all = ["phi", "theta", "psi1", "psi2", "omega", "gamma"];
    assert_eq!(resumed.model.digest(&all), full.model.digest(&all));
}

#[test]
fn reconstruction_improves_with_a_heavy_distortion_weight() {
    let data = data::synthetic(16, 10);
    let cfg = TrainConfig { alpha: 10.0, batch1: 16, epochs1: 200, ..Default::default() };
    let mut t = trainer(cfg, 11);
    let before = pipeline::evaluate(&mut t.model, &data, 16).unwrap().mse;
    t.step1(&data).unwrap();
    let after = pipeline::evaluate(&mut t.model, &data, 16).unwrap().mse;
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn divergence_restores_the_last_completed_iteration() {
    let data = data::synthetic(16, 11);
    let mut t = trainer(TrainConfig { lr_codec: 1e9, iterations: 3, ..small() }, 12);
    let all = ["phi", "theta", "psi1", "psi2", "omega", "gamma"];
    let d0 = t.model.digest(&all);
    let err = t.iterate(&data, None).unwrap_err();
    assert!(matches!(err, CoreError::NonFinite(_) | CoreError::Autodiff(_)), "{err}");
    assert_eq!(t.iteration, 0);
    assert!(t.log.is_empty());
    assert_eq!(t.model.digest(&all), d0);
}

#[test]
fn invalid_training_configs_are_rejected() {
    let model = || CodecModel::new(CodecConfig::default(), 1).unwrap();
    for cfg in [
        TrainConfig { lambda1: -1.0, ..Default::default() },
        TrainConfig { alpha: 0.0, ..Default::default() },
        TrainConfig { batch1: 0, ..Default::default() },
        TrainConfig { batch_noise: 2, ..Default::default() },
    ] {
        assert!(Trainer::new(model(), cfg).is_err());
    }
}

proptest! {
    #[test]
    fn loss_weights_sum_to_one(lambda1 in 0.0f64..1e6) {
        let (w0, w1) = TrainConfig { lambda1, ..Default::default() }.weights();
        prop_assert!((w0 + w1 - 1.0).abs() < 1e-12);
        prop_assert!(w0 >= 0.0 && w1 >= 0.0);
    }
}
