//! Desk-scale training campaign behind the directional checks: an alpha
//! sweep, a lambda1 = 0 comparison, the end-to-end baseline and a channel
//! SNR sweep on one trained model. Every run is cached on disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dsscc_channel::{ChannelConfig, ChannelMode};
use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, CodecModel};
use crate::data::{self, Dataset};
use crate::error::Result;
use crate::pipeline::{self, Evaluation, ExperimentConfig, Summary};
use crate::train::{TrainConfig, Trainer};

/// Set to force every cached run to be recomputed.
pub const FRESH_ENV: &str = "DSSCC_FRESH";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub train_images: usize,
    pub test_images: usize,
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
    /// Alpha of the lambda1 = 1 reference model.
    pub reference_alpha: f64,
    /// Alpha of the lambda1 = 0 model compared against the reference.
    pub pure_alpha: f64,
    pub train: TrainConfig,
    pub codec: CodecConfig,
    /// Images sent through the LDPC channel per SNR point.
    pub channel_images: usize,
    pub channel_snrs_db: Vec<f64>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            train_images: 5000,
            test_images: 1000,
            data_seed: 11,
            seeds: vec![1, 2, 3],
            alphas: vec![0.05, 0.3, 1.0],
            reference_alpha: 0.3,
            pure_alpha: 0.15,
            train: TrainConfig::default(),
            codec: CodecConfig::default(),
            channel_images: 40,
            channel_snrs_db: vec![0.0, 12.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Iterative,
    EndToEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub schedule: Schedule,
    pub alpha: f64,
    pub lambda1: f64,
    pub seed: u64,
    pub test: Evaluation,
    pub final_train_mse: f64,
    pub epochs: usize,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPoint {
    pub snr_db: f64,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub runs: Vec<RunResult>,
    /// LDPC sweep on the reference model of the first seed.
    pub channel: Vec<ChannelPoint>,
}

impl CampaignReport {
    pub fn find(&self, schedule: Schedule, alpha: f64, lambda1: f64, seed: u64) -> Option<&RunResult> {
        self.runs
            .iter()
            .find(|r| r.schedule == schedule && r.alpha == alpha && r.lambda1 == lambda1 && r.seed == seed)
    }
}

fn fresh() -> bool {
    std::env::var_os(FRESH_ENV).is_some_and(|v| !v.is_empty() && v != "0")
}

fn run_name(schedule: Schedule, alpha: f64, lambda1: f64, seed: u64) -> String {
    let s = match schedule {
        Schedule::Iterative => "iter",
        Schedule::EndToEnd => "e2e",
    };
    format!("{s}_a{alpha}_l{lambda1}_s{seed}")
}

pub struct Campaign {
    pub config: CampaignConfig,
    pub dir: PathBuf,
    train: Dataset,
    test: Dataset,
    log: Box<dyn FnMut(&str)>,
}

impl Campaign {
    pub fn new(config: CampaignConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        config.train.validate()?;
        config.codec.validate()?;
        let all = data::synthetic(config.train_images + config.test_images, config.data_seed);
        Ok(Campaign {
            train: all.slice(0, config.train_images),
            test: all.slice(config.train_images, all.len()),
            config,
            dir: dir.into(),
            log: Box::new(|_| {}),
        })
    }

    pub fn with_log(mut self, log: impl FnMut(&str) + 'static) -> Self {
        self.log = Box::new(log);
        self
    }

    fn train_config(&self, alpha: f64, lambda1: f64, seed: u64) -> TrainConfig {
        TrainConfig { alpha, lambda1, seed, ..self.config.train.clone() }
    }

    /// Trains (or loads) one model and evaluates it on the test split.
    pub fn run(&mut self, schedule: Schedule, alpha: f64, lambda1: f64, seed: u64) -> Result<RunResult> {
        let name = run_name(schedule, alpha, lambda1, seed);
        let dir = self.dir.join("runs").join(&name);
        let result_path = dir.join("result.json");
        if !fresh() && result_path.exists() {
            (self.log)(&format!("{name}: cached"));
            return Ok(serde_json::from_slice(&fs::read(&result_path)?)?);
        }
        if fresh() && dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let cfg = self.train_config(alpha, lambda1, seed);
        let start = Instant::now();
        let mut trainer = match schedule {
            Schedule::Iterative if dir.join("state.json").exists() => {
                (self.log)(&format!("{name}: resuming"));
                Trainer::resume(self.config.codec.clone(), cfg, &dir)?
            }
            _ => Trainer::new(CodecModel::new(self.config.codec.clone(), seed)?, cfg)?,
        };
        match schedule {
            Schedule::Iterative => trainer.iterate(&self.train, Some(&dir))?,
            Schedule::EndToEnd => {
                trainer.end_to_end(&self.train)?;
                trainer.model.save(dir.join("model.ckpt"))?;
            }
        }
        trainer.write_log(&dir.join("log.csv"))?;
        let test = pipeline::evaluate(&mut trainer.model, &self.test, 100)?;
        let result = RunResult {
            name: name.clone(),
            schedule,
            alpha,
            lambda1,
            seed,
            test,
            final_train_mse: trainer.log.iter().rev().find(|r| r.mse > 0.0).map_or(f64::NAN, |r| r.mse),
            epochs: trainer.log.len(),
            train_seconds: start.elapsed().as_secs_f64(),
        };
        fs::write(&result_path, serde_json::to_vec_pretty(&result)?)?;
        (self.log)(&format!("{name}: {:?} in {:.0}s", result.test, result.train_seconds));
        Ok(result)
    }

    /// LDPC transmission of test images through one trained model.
    pub fn channel_point(&mut self, model_dir: &Path, snr_db: f64) -> Result<ChannelPoint> {
        let out = self.dir.join("channel").join(format!("snr{snr_db}"));
        let summary_path = out.join("point.json");
        if !fresh() && summary_path.exists() {
            return Ok(serde_json::from_slice(&fs::read(&summary_path)?)?);
        }
        let exp = ExperimentConfig {
            dataset: None,
            checkpoint: Some(model_dir.join("model.ckpt")),
            codec: self.config.codec.clone(),
            channel: ChannelConfig { mode: ChannelMode::Ldpc16Qam, snr_db, seed: 7, ..Default::default() },
            output_dir: out.clone(),
            ..Default::default()
        };
        let mut model = exp.load_model()?;
        let code = exp.channel.code()?;
        let images = self.test.take(self.config.channel_images);
        let records = pipeline::run_dataset(&mut model, &images, &exp.channel, &code, &exp)?;
        let point = ChannelPoint { snr_db, summary: Summary::from_records(&records) };
        fs::write(&summary_path, serde_json::to_vec_pretty(&point)?)?;
        (self.log)(&format!("channel {snr_db} dB: {:?}", point.summary));
        Ok(point)
    }

    /// Every run of the campaign, cheapest directional checks first.
    pub fn execute(&mut self) -> Result<CampaignReport> {
        let c = self.config.clone();
        let mut runs = Vec::new();
        let first = c.seeds[0];
        runs.push(self.run(Schedule::Iterative, c.reference_alpha, 1.0, first)?);
        let reference_dir = self.dir.join("runs").join(run_name(Schedule::Iterative, c.reference_alpha, 1.0, first));
        let channel = c.channel_snrs_db.iter().map(|&s| self.channel_point(&reference_dir, s)).collect::<Result<_>>()?;
        for &seed in &c.seeds {
            for &alpha in &c.alphas {
                if !(alpha == c.reference_alpha && seed == first) {
                    runs.push(self.run(Schedule::Iterative, alpha, 1.0, seed)?);
                }
            }
            if !c.alphas.contains(&c.reference_alpha) {
                runs.push(self.run(Schedule::Iterative, c.reference_alpha, 1.0, seed)?);
            }
            runs.push(self.run(Schedule::Iterative, c.pure_alpha, 0.0, seed)?);
            runs.push(self.run(Schedule::EndToEnd, c.reference_alpha, 1.0, seed)?);
        }
        let report = CampaignReport { config: c, runs, channel };
        fs::write(self.dir.join("campaign.json"), serde_json::to_vec_pretty(&report)?)?;
        Ok(report)
    }
}
