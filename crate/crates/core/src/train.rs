//! Loss, the two-step iterative trainer and the end-to-end baseline.
//!
//! Per-image loss, averaged over the batch:
//! `total = (R_y + R_z) / (H W) + w0 * alpha * MSE + w1 * CE`, with rates
//! in nats, MSE on the `[0, 255]` pixel scale, `w0 = 1 / (1 + lambda1)` and
//! `w1 = lambda1 / (1 + lambda1)`.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use dsscc_autodiff::{Graph, ModelParams, NodeId, Optimizer, OptimizerState, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecModel, CLASSIFIER_PREFIX, CODEC_PREFIXES};
use crate::data::Dataset;
use crate::entropy::{factorized, FactorizedRate, GaussianRate};
use crate::error::{CoreError, Result};
use crate::quant::NoiseRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierOptimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub alpha: f64,
    /// Image batch for Step 1 and for the end-to-end baseline.
    pub batch1: usize,
    /// Batch for the classifier-only Step 2.
    pub batch2: usize,
    /// Noise draws per image; only 1 is supported.
    pub batch_noise: usize,
    pub epochs1: usize,
    pub epochs2: usize,
    pub iterations: usize,
    pub lr_codec: f32,
    pub lr_classifier: f32,
    pub classifier_optimizer: ClassifierOptimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            alpha: 0.3,
            batch1: 16,
            batch2: 32,
            batch_noise: 1,
            epochs1: 5,
            epochs2: 5,
            iterations: 3,
            lr_codec: 5e-4,
            lr_classifier: 1e-3,
            classifier_optimizer: ClassifierOptimizer::Adam,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return Err(CoreError::Config("lambda1 must be >= 0".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(CoreError::Config("alpha must be > 0".into()));
        }
        if self.batch1 == 0 || self.batch2 == 0 || self.epochs1 == 0 || self.epochs2 == 0 {
            return Err(CoreError::Config("batch sizes and epoch counts must be positive".into()));
        }
        if self.batch_noise != 1 {
            return Err(CoreError::Config("only one noise draw per image is supported".into()));
        }
        if !(self.lr_codec > 0.0) || !(self.lr_classifier > 0.0) {
            return Err(CoreError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// `(w0, w1)`.
    pub fn weights(&self) -> (f64, f64) {
        (1.0 / (1.0 + self.lambda1), self.lambda1 / (1.0 + self.lambda1))
    }

    fn classifier_optimizer(&self) -> Optimizer {
        match self.classifier_optimizer {
            ClassifierOptimizer::Adam => Optimizer::adam(self.lr_classifier),
            ClassifierOptimizer::Sgd => Optimizer::sgd(self.lr_classifier),
        }
    }
}

/// Batch-mean loss terms. Rates are bits per image; `distortion_image` is
/// `alpha * MSE`; `total` is the optimized per-pixel objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rate_y: f64,
    pub rate_z: f64,
    pub mse: f64,
    pub distortion_image: f64,
    pub distortion_semantic: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Step1,
    Step2,
    EndToEnd,
}

impl Phase {
    fn index(self) -> u64 {
        match self {
            Phase::Step1 => 1,
            Phase::Step2 => 2,
            Phase::EndToEnd => 3,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub iteration: usize,
    pub step: Phase,
    pub epoch: usize,
    pub rate_y_bits: f64,
    pub rate_z_bits: f64,
    pub mse: f64,
    pub cross_entropy: f64,
    pub total: f64,
    pub wall_seconds: f64,
}

/// The training graph and the node ids of its loss terms.
#[derive(Clone, Debug)]
pub struct LossGraph {
    pub graph: Graph,
    rate_y: Option<NodeId>,
    rate_z: Option<NodeId>,
    mse: NodeId,
    ce: NodeId,
    total: NodeId,
    pixels: f64,
}

impl LossGraph {
    /// Inputs: `x`, `noise_y`, `noise_z`, `labels`. Step 2 skips the hyper
    /// path and the rates, and optimizes the cross-entropy alone.
    pub fn build(model: &CodecModel, cfg: &TrainConfig, phase: Phase) -> Self {
        let c = &model.config;
        let (w0, w1) = cfg.weights();
        let pixels = (c.height * c.width) as f64;
        let mut g = Graph::new();
        let x = g.input("x");
        let ny = g.input("noise_y");
        let labels = g.input("labels");
        let y = codec::analysis(&mut g, x);
        let y_tilde = g.add(y, ny);
        let x_hat = codec::synthesis(&mut g, y_tilde);
        let diff = g.sub(x_hat, x);
        let sq = g.square(diff);
        let mse = g.mean(sq);
        let logits = codec::classifier_logits(&mut g, x_hat);
        let ce = g.softmax_cross_entropy(logits, labels);
        let (rate_y, rate_z, total) = if phase == Phase::Step2 {
            (None, None, ce)
        } else {
            let nz = g.input("noise_z");
            let z = codec::hyper_analysis(&mut g, y);
            let z_tilde = g.add(z, nz);
            let sigma = codec::hyper_synthesis(&mut g, z_tilde, c.sigma_floor);
            let ry = g.custom(Arc::new(GaussianRate), &[y_tilde, sigma]);
            let mut zin = vec![z_tilde];
            zin.extend(factorized::param_names("omega").iter().map(|n| g.param(n)));
            let rz = g.custom(Arc::new(FactorizedRate), &zin);
            g.set_output("y_tilde", y_tilde);
            g.set_output("z_tilde", z_tilde);
            g.set_output("sigma", sigma);
            let rate = g.add(ry, rz);
            // Rates are batch sums; `scale_rate` is applied per batch in `run`.
            let rate_pp = g.input("rate_scale");
            let rate_term = g.mul(rate, rate_pp);
            let d0 = g.scale(mse, (w0 * cfg.alpha) as f32);
            let d1 = g.scale(ce, w1 as f32);
            let t = g.add(rate_term, d0);
            let t = g.add(t, d1);
            (Some(ry), Some(rz), t)
        };
        g.set_output("total", total);
        LossGraph { graph: g, rate_y, rate_z, mse, ce, total, pixels }
    }

    fn inputs(&self, model: &CodecModel, data: &Dataset, idx: &[usize], rng: &mut NoiseRng) -> HashMap<String, Tensor> {
        let b = idx.len();
        let c = &model.config;
        let mut m = HashMap::new();
        m.insert("x".to_string(), data.batch(idx));
        m.insert("labels".to_string(), data.batch_labels(idx));
        m.insert("noise_y".to_string(), rng.noise(&c.y_shape(b)));
        if self.rate_y.is_some() {
            m.insert("noise_z".to_string(), rng.noise(&c.z_shape(b)));
            m.insert("rate_scale".to_string(), Tensor::scalar((1.0 / (b as f64 * self.pixels)) as f32));
        }
        m
    }

    fn value(&self, id: NodeId) -> f64 {
        self.graph.value(id).map(|t| t.data()[0] as f64).unwrap_or(0.0)
    }

    fn parts(&self, cfg: &TrainConfig, batch: usize) -> LossParts {
        let to_bits = |id: Option<NodeId>| id.map(|i| self.value(i) / LN_2 / batch as f64).unwrap_or(0.0);
        let mse = self.value(self.mse);
        LossParts {
            rate_y: to_bits(self.rate_y),
            rate_z: to_bits(self.rate_z),
            mse,
            distortion_image: cfg.alpha * mse,
            distortion_semantic: self.value(self.ce),
            total: self.value(self.total),
        }
    }

    /// Forward pass on one batch.
    pub fn loss(
        &mut self,
        model: &CodecModel,
        cfg: &TrainConfig,
        data: &Dataset,
        idx: &[usize],
        rng: &mut NoiseRng,
    ) -> Result<LossParts> {
        let inputs = self.inputs(model, data, idx, rng);
        self.graph.forward(&model.params, &inputs)?;
        let parts = self.parts(cfg, idx.len());
        if !parts.total.is_finite() {
            return Err(CoreError::NonFinite(format!("loss {parts:?}")));
        }
        Ok(parts)
    }

    /// Forward, backward and one optimizer update.
    fn train_batch(
        &mut self,
        model: &mut CodecModel,
        cfg: &TrainConfig,
        opt: &mut OptimizerState,
        data: &Dataset,
        idx: &[usize],
        rng: &mut NoiseRng,
    ) -> Result<LossParts> {
        let parts = self.loss(model, cfg, data, idx, rng)?;
        let grads = self.graph.backward(self.total)?;
        opt.step(&mut model.params, &grads)?;
        Ok(parts)
    }

    /// Gradients of the total on one batch, for inspection.
    pub fn gradients(
        &mut self,
        model: &CodecModel,
        cfg: &TrainConfig,
        data: &Dataset,
        idx: &[usize],
        rng: &mut NoiseRng,
    ) -> Result<(LossParts, dsscc_autodiff::Gradients)> {
        let parts = self.loss(model, cfg, data, idx, rng)?;
        Ok((parts, self.graph.backward(self.total)?))
    }
}

/// Sets the frozen flags for a phase.
pub fn freeze_for(params: &mut ModelParams, phase: Phase) {
    let codec_frozen = phase == Phase::Step2;
    for p in CODEC_PREFIXES {
        params.freeze_prefix(&format!("{p}."), codec_frozen);
    }
    params.freeze_prefix(&format!("{CLASSIFIER_PREFIX}."), phase == Phase::Step1);
}

fn epoch_stream(iteration: usize, phase: Phase, epoch: usize) -> u64 {
    ((iteration as u64) << 32) | (phase.index() << 24) | epoch as u64
}

/// Training state that survives across iterations and checkpoints.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: CodecModel,
    pub config: TrainConfig,
    pub iteration: usize,
    pub log: Vec<EpochRecord>,
    codec_opt: OptimizerState,
    classifier_opt: OptimizerState,
    step1: LossGraph,
    step2: LossGraph,
    e2e: LossGraph,
}

impl Trainer {
    pub fn new(model: CodecModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            step1: LossGraph::build(&model, &config, Phase::Step1),
            step2: LossGraph::build(&model, &config, Phase::Step2),
            e2e: LossGraph::build(&model, &config, Phase::EndToEnd),
            codec_opt: OptimizerState::new(Optimizer::adam(config.lr_codec)),
            classifier_opt: OptimizerState::new(config.classifier_optimizer()),
            model,
            config,
            iteration: 0,
            log: Vec::new(),
        })
    }

    fn epoch(&mut self, data: &Dataset, phase: Phase, epoch: usize) -> Result<EpochRecord> {
        let start = Instant::now();
        freeze_for(&mut self.model.params, phase);
        let mut rng = NoiseRng::new(self.config.seed, epoch_stream(self.iteration, phase, epoch));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng.rng());
        let batch = if phase == Phase::Step2 { self.config.batch2 } else { self.config.batch1 };
        let (graph, opt) = match phase {
            Phase::Step1 => (&mut self.step1, &mut self.codec_opt),
            Phase::Step2 => (&mut self.step2, &mut self.classifier_opt),
            Phase::EndToEnd => (&mut self.e2e, &mut self.codec_opt),
        };
        let mut acc = [0.0f64; 5];
        for idx in order.chunks(batch) {
            let p = graph.train_batch(&mut self.model, &self.config, opt, data, idx, &mut rng)?;
            let w = idx.len() as f64;
            for (a, v) in acc.iter_mut().zip([p.rate_y, p.rate_z, p.mse, p.distortion_semantic, p.total]) {
                *a += w * v;
            }
        }
        let n = data.len() as f64;
        let rec = EpochRecord {
            iteration: self.iteration,
            step: phase,
            epoch,
            rate_y_bits: acc[0] / n,
            rate_z_bits: acc[1] / n,
            mse: acc[2] / n,
            cross_entropy: acc[3] / n,
            total: acc[4] / n,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// Step 1: codec and entropy model with the classifier frozen.
    pub fn step1(&mut self, data: &Dataset) -> Result<Vec<EpochRecord>> {
        (0..self.config.epochs1).map(|e| self.epoch(data, Phase::Step1, e)).collect()
    }

    /// Step 2: classifier only, on reconstructions from the frozen codec.
    pub fn step2(&mut self, data: &Dataset) -> Result<Vec<EpochRecord>> {
        (0..self.config.epochs2).map(|e| self.epoch(data, Phase::Step2, e)).collect()
    }

    /// Remaining iterations of Step 1 then Step 2. A checkpoint is written
    /// to `dir` after each iteration; a non-finite loss restores the last
    /// completed iteration and returns the error.
    pub fn iterate(&mut self, data: &Dataset, dir: Option<&Path>) -> Result<()> {
        while self.iteration < self.config.iterations {
            let good = self.clone_state();
            let res = self.step1(data).and_then(|_| self.step2(data));
            if let Err(e) = res {
                self.restore_state(good);
                return Err(e);
            }
            self.iteration += 1;
            if let Some(d) = dir {
                self.save_checkpoint(d)?;
            }
        }
        Ok(())
    }

    /// Joint training of every parameter with one optimizer, for
    /// `iterations * (epochs1 + epochs2)` epochs at batch `batch1`.
    pub fn end_to_end(&mut self, data: &Dataset) -> Result<()> {
        let epochs = self.config.iterations * (self.config.epochs1 + self.config.epochs2);
        for e in 0..epochs {
            self.epoch(data, Phase::EndToEnd, e)?;
        }
        Ok(())
    }

    fn clone_state(&self) -> (ModelParams, OptimizerState, OptimizerState, usize) {
        (self.model.params.clone(), self.codec_opt.clone(), self.classifier_opt.clone(), self.log.len())
    }

    fn restore_state(&mut self, s: (ModelParams, OptimizerState, OptimizerState, usize)) {
        self.model.params = s.0;
        self.codec_opt = s.1;
        self.classifier_opt = s.2;
        self.log.truncate(s.3);
    }

    /// Writes `model.ckpt`, `codec_opt.ckpt`, `classifier_opt.ckpt` and `state.json`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.model.save(dir.join("model.ckpt"))?;
        self.codec_opt.export().save(dir.join("codec_opt.ckpt"))?;
        self.classifier_opt.export().save(dir.join("classifier_opt.ckpt"))?;
        let state = CheckpointState { iteration: self.iteration, log: self.log.clone() };
        fs::write(dir.join("state.json"), serde_json::to_vec_pretty(&state)?)?;
        Ok(())
    }

    pub fn resume(config: crate::CodecConfig, train: TrainConfig, dir: &Path) -> Result<Self> {
        let model = CodecModel::load(config, dir.join("model.ckpt"))?;
        let mut t = Trainer::new(model, train)?;
        t.codec_opt = OptimizerState::import(t.codec_opt.optimizer, &ModelParams::load(dir.join("codec_opt.ckpt"))?)?;
        t.classifier_opt =
            OptimizerState::import(t.classifier_opt.optimizer, &ModelParams::load(dir.join("classifier_opt.ckpt"))?)?;
        let state: CheckpointState = serde_json::from_slice(&fs::read(dir.join("state.json"))?)?;
        t.iteration = state.iteration;
        t.log = state.log;
        Ok(t)
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        write_log(path, &self.log)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointState {
    iteration: usize,
    log: Vec<EpochRecord>,
}

pub fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in log {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
