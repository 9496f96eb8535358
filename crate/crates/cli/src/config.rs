//! TOML run configuration. Every section is optional.
//!
//! ```toml
//! output_dir = "out"
//!
//! [data]
//! dataset = "data_batch_1.bin"   # synthetic images when omitted
//! synthetic_images = 100
//! synthetic_seed = 2
//! offset = 0
//! limit = 50
//!
//! [codec]
//! filters = 32
//! y_channels = 48
//! z_channels = 32
//!
//! [train]
//! lambda1 = 1.0
//! alpha = 0.3
//! iterations = 3
//!
//! [channel]
//! mode = "ldpc16_qam"            # or "ideal_capacity"
//! snr_db = 12.0
//!
//! [campaign]
//! train_images = 5000
//! ```

use std::path::{Path, PathBuf};

use dsscc_channel::ChannelConfig;
use dsscc_core::campaign::CampaignConfig;
use dsscc_core::data::{self, Dataset};
use dsscc_core::pipeline::ExperimentConfig;
use dsscc_core::train::TrainConfig;
use dsscc_core::CodecConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: Option<PathBuf>,
    pub synthetic_images: usize,
    pub synthetic_seed: u64,
    pub offset: usize,
    pub limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { dataset: None, synthetic_images: 100, synthetic_seed: 2, offset: 0, limit: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub output_dir: Option<PathBuf>,
    pub tag: String,
    pub data: DataConfig,
    pub codec: CodecConfig,
    pub train: TrainConfig,
    pub channel: ChannelConfig,
    pub campaign: CampaignConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: Config = match path {
            Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
            None => Config::default(),
        };
        cfg.codec.validate()?;
        cfg.channel.validate()?;
        Ok(cfg)
    }

    pub fn experiment(&self, checkpoint: Option<PathBuf>, output_dir: Option<PathBuf>) -> Result<ExperimentConfig> {
        let output_dir = output_dir
            .or_else(|| self.output_dir.clone())
            .ok_or_else(|| CliError::Usage("no output directory (use --out or output_dir)".into()))?;
        Ok(ExperimentConfig {
            dataset: self.data.dataset.clone(),
            synthetic_images: self.data.synthetic_images,
            synthetic_seed: self.data.synthetic_seed,
            offset: self.data.offset,
            limit: self.data.limit,
            checkpoint,
            model_seed: self.train.seed,
            codec: self.codec.clone(),
            channel: self.channel.clone(),
            tag: self.tag.clone(),
            output_dir,
            ..Default::default()
        })
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let all = match &self.data.dataset {
            Some(p) => data::load_cifar10(p)?,
            None => data::synthetic(self.data.synthetic_images, self.data.synthetic_seed),
        };
        let end = self.data.limit.map_or(all.len(), |l| self.data.offset + l);
        Ok(all.slice(self.data.offset, end))
    }
}
