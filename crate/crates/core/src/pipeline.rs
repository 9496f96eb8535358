//! Image coding path, channel transmission and experiment orchestration.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use dsscc_autodiff::Tensor;
use dsscc_channel::{transmit, ChannelConfig, ChannelMode, LdpcCode};
use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, CodecModel};
use crate::container::{self, Dims};
use crate::data::{self, Dataset};
use crate::entropy::{CdfTable, FactorizedDensity, GaussianConditional};
use crate::error::{CoreError, Result};
use crate::metrics;
use crate::quant;
use crate::rc;

const OMEGA: &str = "omega";

/// Tables of one model, with Gaussian tables memoized by the bits of sigma.
pub struct TableSet {
    gaussian: GaussianConditional,
    factorized: Vec<CdfTable>,
    density: FactorizedDensity,
    cache: HashMap<u32, CdfTable>,
}

impl TableSet {
    pub fn new(model: &CodecModel) -> Result<Self> {
        let density = FactorizedDensity::from_params(&model.params, OMEGA)?;
        let factorized = (0..density.num_channels()).map(|c| CdfTable::factorized(&density, c)).collect::<Result<_>>()?;
        Ok(TableSet {
            gaussian: GaussianConditional { sigma_floor: model.config.sigma_floor as f64 },
            factorized,
            density,
            cache: HashMap::new(),
        })
    }

    pub fn density(&self) -> &FactorizedDensity {
        &self.density
    }

    fn fill(&mut self, sigma: &[f32]) -> Result<()> {
        for &s in sigma {
            if !self.cache.contains_key(&s.to_bits()) {
                self.gaussian.check(s as f64)?;
                self.cache.insert(s.to_bits(), CdfTable::gaussian(s as f64)?);
            }
        }
        Ok(())
    }

    fn y_tables(&mut self, sigma: &[f32]) -> Result<Vec<&CdfTable>> {
        self.fill(sigma)?;
        Ok(sigma.iter().map(|s| &self.cache[&s.to_bits()]).collect())
    }

    fn z_tables(&self, len: usize) -> Vec<&CdfTable> {
        let c = self.factorized.len();
        (0..len).map(|i| &self.factorized[i % c]).collect()
    }
}

/// Quantized latents of one image with their scales.
#[derive(Clone, Debug)]
pub struct Latents {
    pub y: Tensor,
    pub z: Tensor,
    pub sigma: Tensor,
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub latents: Latents,
    /// Full container including the header.
    pub bytes: Vec<u8>,
    /// Payload bits of both streams, header excluded.
    pub rate_bits: u64,
}

fn dims(t: &Tensor) -> Result<Dims> {
    let s = t.shape();
    let mut d = [0u16; 3];
    for (o, v) in d.iter_mut().zip(&s[1..4]) {
        *o = u16::try_from(*v).map_err(|_| CoreError::Dimension(format!("latent dims {s:?}")))?;
    }
    Ok(d)
}

fn as_i64(t: &Tensor) -> Vec<i64> {
    quant::symbols(t).into_iter().map(i64::from).collect()
}

/// Quantized latents of a single `[1, H, W, 3]` image.
pub fn latents(model: &mut CodecModel, x: &Tensor) -> Result<Latents> {
    if x.shape().first() != Some(&1) {
        return Err(CoreError::Dimension(format!("expected one image, got {:?}", x.shape())));
    }
    let y = quant::quantize(&model.analyze(x)?)?;
    let z = quant::quantize(&model.hyper_analyze(&y)?)?;
    let sigma = model.hyper_synthesize(&z)?;
    Ok(Latents { y, z, sigma })
}

pub fn encode(model: &mut CodecModel, tables: &mut TableSet, x: &Tensor) -> Result<Encoded> {
    let latents = latents(model, x)?;
    let z_sym = as_i64(&latents.z);
    let z_bytes = rc::encode_symbols(&z_sym, &tables.z_tables(z_sym.len()))?;
    let y_sym = as_i64(&latents.y);
    let y_bytes = rc::encode_symbols(&y_sym, &tables.y_tables(latents.sigma.data())?)?;
    let rate_bits = 8 * (z_bytes.len() + y_bytes.len()) as u64;
    let bytes = container::pack(&z_bytes, &y_bytes, dims(&latents.y)?, dims(&latents.z)?)?;
    Ok(Encoded { latents, bytes, rate_bits })
}

/// Recovers the latents and the reconstruction from a container.
pub fn decode(model: &mut CodecModel, tables: &mut TableSet, bytes: &[u8]) -> Result<(Latents, Tensor)> {
    let frame = container::unpack(bytes)?;
    let shape = |d: Dims| [1, d[0] as usize, d[1] as usize, d[2] as usize];
    let (ys, zs) = (shape(frame.y_dims), shape(frame.z_dims));
    if ys != model.config.y_shape(1) || zs != model.config.z_shape(1) {
        return Err(CoreError::Dimension(format!("stream dims {ys:?} / {zs:?} do not match the model")));
    }
    let n_z = zs.iter().product();
    let z_sym = rc::decode_symbols(&frame.z_bytes, &tables.z_tables(n_z));
    let z = Tensor::from_slice(&zs, &z_sym.iter().map(|&v| v as f32).collect::<Vec<_>>());
    let sigma = model.hyper_synthesize(&z)?;
    let y_sym = rc::decode_symbols(&frame.y_bytes, &tables.y_tables(sigma.data())?);
    let y = Tensor::from_slice(&ys, &y_sym.iter().map(|&v| v as f32).collect::<Vec<_>>());
    let x_hat = model.synthesize(&y)?;
    Ok((Latents { y, z, sigma }, x_hat))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    Ok,
    /// Refused by the capacity gate.
    Rejected,
    /// Corrupted in transit and replaced by a mid-grey image.
    Lost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub image_id: usize,
    pub rate_bits: u64,
    pub channel_uses: u64,
    pub channel_bandwidth_ratio: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub label: u8,
    pub predicted: usize,
    pub top5_hit: bool,
    pub frame_status: Delivery,
    pub unconverged_codewords: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub images: usize,
    pub mean_psnr_db: f64,
    pub mean_ms_ssim: f64,
    pub top1_accuracy: f64,
    pub top5_accuracy: f64,
    pub mean_rate_bits: f64,
    pub mean_bandwidth_ratio: f64,
    pub frame_loss_rate: f64,
}

impl Summary {
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let n = records.len();
        if n == 0 {
            return Summary::default();
        }
        let mean = |f: &dyn Fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
        Summary {
            images: n,
            mean_psnr_db: mean(&|r| r.psnr_db),
            mean_ms_ssim: mean(&|r| r.ms_ssim),
            top1_accuracy: mean(&|r| f64::from(r.predicted == r.label as usize)),
            top5_accuracy: mean(&|r| f64::from(r.top5_hit)),
            mean_rate_bits: mean(&|r| r.rate_bits as f64),
            mean_bandwidth_ratio: mean(&|r| r.channel_bandwidth_ratio),
            frame_loss_rate: mean(&|r| f64::from(r.frame_status != Delivery::Ok)),
        }
    }
}

/// Per-image channel seed so images see independent noise.
fn image_seed(seed: u64, id: usize) -> u64 {
    seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Result of sending one image through the whole chain.
#[derive(Clone, Debug)]
pub struct Delivered {
    pub encoded: Encoded,
    pub x_hat: Tensor,
    pub record: MetricsRecord,
}

/// Encodes, transmits, decodes and scores one image.
pub fn deliver(
    model: &mut CodecModel,
    tables: &mut TableSet,
    channel: &ChannelConfig,
    code: &LdpcCode,
    image_id: usize,
    x: &Tensor,
    label: u8,
) -> Result<Delivered> {
    let encoded = encode(model, tables, x)?;
    let mut cfg = channel.clone();
    cfg.seed = image_seed(channel.seed, image_id);
    let (received, uses, unconverged, mut status) = match transmit(&encoded.bytes, &cfg, code) {
        Ok(t) => (Some(t.bytes), t.status.channel_uses, t.status.unconverged, Delivery::Ok),
        Err(dsscc_channel::ChannelError::FrameRejected { uses, .. }) => (None, uses, 0, Delivery::Rejected),
        Err(dsscc_channel::ChannelError::FrameCorrupt(_)) => {
            let uses = ldpc_uses(encoded.bytes.len(), code);
            (None, uses, 0, Delivery::Lost)
        }
        Err(e) => return Err(e.into()),
    };
    let x_hat = match received.as_deref().map(|b| decode(model, tables, b)) {
        Some(Ok((_, x_hat))) => x_hat,
        Some(Err(CoreError::FrameCorrupt(_) | CoreError::Format(_) | CoreError::Dimension(_))) | None => {
            if status == Delivery::Ok {
                status = Delivery::Lost;
            }
            Tensor::full(x.shape(), 128.0)
        }
        Some(Err(e)) => return Err(e),
    };
    let probs = model.classify(&x_hat)?;
    let (predicted, top5) = metrics::map_classify(probs.data(), 5);
    let s = x.shape();
    let record = MetricsRecord {
        image_id,
        rate_bits: encoded.rate_bits,
        channel_uses: uses,
        channel_bandwidth_ratio: uses as f64 / x.len() as f64,
        psnr_db: metrics::psnr(x.data(), x_hat.data())?,
        ms_ssim: metrics::ms_ssim(x.data(), x_hat.data(), s[1], s[2], s[3])?,
        label,
        predicted,
        top5_hit: top5.contains(&(label as usize)),
        frame_status: status,
        unconverged_codewords: unconverged,
    };
    Ok(Delivered { encoded, x_hat, record })
}

/// Channel uses of an LDPC frame carrying `bytes` bytes.
fn ldpc_uses(bytes: usize, code: &LdpcCode) -> u64 {
    let framed = dsscc_channel::channel::frame(&vec![0; bytes], code.k() / 8).len();
    (framed / (code.k() / 8) * code.n() / dsscc_channel::qam::BITS_PER_SYMBOL) as u64
}

/// Everything one evaluation run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// CIFAR-10 binary batch file; a synthetic set when absent.
    pub dataset: Option<PathBuf>,
    pub synthetic_images: usize,
    pub synthetic_seed: u64,
    /// First image index and image count taken from the set.
    pub offset: usize,
    pub limit: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    /// Initialization seed when no checkpoint is given.
    pub model_seed: u64,
    pub codec: CodecConfig,
    pub channel: ChannelConfig,
    /// Free-form run tag, copied to the summary.
    pub tag: String,
    pub output_dir: PathBuf,
    pub write_bitstreams: bool,
    /// Number of leading images whose bit-allocation map is written.
    pub bit_maps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            synthetic_images: 100,
            synthetic_seed: 2,
            offset: 0,
            limit: None,
            checkpoint: None,
            model_seed: 1,
            codec: CodecConfig::default(),
            channel: ChannelConfig::default(),
            tag: String::new(),
            output_dir: PathBuf::from("out"),
            write_bitstreams: false,
            bit_maps: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load_dataset(&self) -> Result<Dataset> {
        let all = match &self.dataset {
            Some(p) => data::load_cifar10(p)?,
            None => data::synthetic(self.synthetic_images, self.synthetic_seed),
        };
        let end = self.limit.map_or(all.len(), |l| (self.offset + l).min(all.len()));
        if self.offset >= end {
            return Err(CoreError::Config(format!("no images in [{}, {end})", self.offset)));
        }
        Ok(all.slice(self.offset, end))
    }

    pub fn load_model(&self) -> Result<CodecModel> {
        match &self.checkpoint {
            Some(p) => CodecModel::load(self.codec.clone(), p),
            None => CodecModel::new(self.codec.clone(), self.model_seed),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct SummaryFile<'a> {
    tag: &'a str,
    channel_mode: ChannelMode,
    snr_db: f64,
    #[serde(flatten)]
    summary: &'a Summary,
}

/// Runs the chain over the configured images and writes `metrics.csv`,
/// `summary.json` and optional bitstreams and bit maps.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<MetricsRecord>, Summary)> {
    let data = cfg.load_dataset()?;
    let mut model = cfg.load_model()?;
    let code = cfg.channel.code()?;
    let records = run_dataset(&mut model, &data, &cfg.channel, &code, cfg)?;
    let summary = Summary::from_records(&records);
    let file = SummaryFile { tag: &cfg.tag, channel_mode: cfg.channel.mode, snr_db: cfg.channel.snr_db, summary: &summary };
    fs::write(cfg.output_dir.join("summary.json"), serde_json::to_vec_pretty(&file)?)?;
    Ok((records, summary))
}

/// Delivers every image of `data`, writing outputs under `cfg.output_dir`.
pub fn run_dataset(
    model: &mut CodecModel,
    data: &Dataset,
    channel: &ChannelConfig,
    code: &LdpcCode,
    cfg: &ExperimentConfig,
) -> Result<Vec<MetricsRecord>> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    if cfg.write_bitstreams {
        fs::create_dir_all(out.join("streams"))?;
    }
    if cfg.bit_maps > 0 {
        fs::create_dir_all(out.join("maps"))?;
    }
    let mut tables = TableSet::new(model)?;
    let mut records = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let id = cfg.offset + i;
        let x = data.batch(&[i]);
        let d = deliver(model, &mut tables, channel, code, id, &x, data.labels[i])?;
        if cfg.write_bitstreams {
            fs::write(out.join("streams").join(format!("{id:06}.dscc")), &d.encoded.bytes)?;
        }
        if i < cfg.bit_maps {
            let (map, h, w) = metrics::bit_allocation_map(&d.encoded.latents.y, &d.encoded.latents.sigma)?;
            metrics::write_pgm(out.join("maps").join(format!("{id:06}.pgm")), &map, h, w)?;
        }
        records.push(d.record);
    }
    write_records(&out.join("metrics.csv"), &records)?;
    Ok(records)
}

pub fn write_records(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Aggregates of the deterministic hard-quantized path, without a channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mse: f64,
    pub psnr_db: f64,
    /// Model bits of y and z per image.
    pub rate_bits: f64,
}

/// Batched evaluation: rounds the latents, reconstructs, classifies and
/// sums model bits, without running the range coder.
pub fn evaluate(model: &mut CodecModel, data: &Dataset, batch: usize) -> Result<Evaluation> {
    let gaussian = GaussianConditional { sigma_floor: model.config.sigma_floor as f64 };
    let density = FactorizedDensity::from_params(&model.params, OMEGA)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut ev = Evaluation::default();
    for chunk in idx.chunks(batch.max(1)) {
        let x = data.batch(chunk);
        let y = quant::quantize(&model.analyze(&x)?)?;
        let z = quant::quantize(&model.hyper_analyze(&y)?)?;
        let sigma = model.hyper_synthesize(&z)?;
        let (by, bz) = crate::entropy::rate_bits(&y, &z, &sigma, &gaussian, &density)?;
        ev.rate_bits += by + bz;
        let x_hat = model.synthesize(&y)?;
        let probs = model.classify(&x_hat)?;
        let k = probs.shape()[1];
        let per = x.len() / chunk.len();
        for (j, &i) in chunk.iter().enumerate() {
            let (label, _) = metrics::map_classify(&probs.data()[j * k..(j + 1) * k], 1);
            ev.accuracy += f64::from(label == data.labels[i] as usize);
            let (a, b) = (&x.data()[j * per..(j + 1) * per], &x_hat.data()[j * per..(j + 1) * per]);
            ev.mse += metrics::mse(a, b)?;
            ev.psnr_db += metrics::psnr(a, b)?;
        }
    }
    let n = data.len().max(1) as f64;
    ev.accuracy /= n;
    ev.mse /= n;
    ev.psnr_db /= n;
    ev.rate_bits /= n;
    Ok(ev)
}
