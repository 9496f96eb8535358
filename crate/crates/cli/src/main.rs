//! `dsscc`: training, coding, channel simulation and evaluation.

mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsscc_channel::ber;
use dsscc_core::campaign::Campaign;
use dsscc_core::data;
use dsscc_core::pipeline::{self, TableSet};
use dsscc_core::train::Trainer;
use dsscc_core::CodecModel;

use crate::config::Config;
use crate::error::{CliError, Result};

#[derive(Parser)]
#[command(name = "dsscc", version, about = "Separate source-channel coding lab")]
struct Cli {
    /// TOML configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model with the two-step schedule (or the end-to-end baseline).
    Train {
        /// Checkpoint directory; training resumes if it holds a checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        end_to_end: bool,
    },
    /// Compress an image (PNG or PPM) into a .dscc bitstream.
    Encode {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the bit-allocation map as PGM.
        #[arg(long)]
        bit_map: Option<PathBuf>,
    },
    /// Reconstruct a PNG from a .dscc bitstream.
    Decode {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Pass a bitstream through the configured channel.
    Transmit {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the full chain over a dataset and write metrics.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        bitstreams: bool,
        #[arg(long, default_value_t = 0)]
        bit_maps: usize,
    },
    /// Check the rate-distortion bound and the surrogate identity on random toy models.
    TheoryCheck {
        #[arg(long, default_value_t = 1000)]
        models: usize,
        #[arg(long, default_value_t = 500)]
        surrogates: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Monte-Carlo BER of the LDPC + 16QAM link over an SNR grid.
    BerSweep {
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 16.0)]
        to: f64,
        #[arg(long, default_value_t = 2.0)]
        step: f64,
        #[arg(long, default_value_t = 1_000_000)]
        min_bits: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Desk-scale training campaign with cached runs.
    Campaign {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Write a synthetic dataset in the CIFAR-10 binary layout.
    MakeDataset {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn load_model(cfg: &Config, path: &Path) -> Result<CodecModel> {
    Ok(CodecModel::load(cfg.codec.clone(), path)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train { out, end_to_end } => {
            let data = cfg.dataset()?;
            let mut trainer = if out.join("state.json").exists() {
                Trainer::resume(cfg.codec.clone(), cfg.train.clone(), &out)?
            } else {
                Trainer::new(CodecModel::new(cfg.codec.clone(), cfg.train.seed)?, cfg.train.clone())?
            };
            if end_to_end {
                trainer.end_to_end(&data)?;
                fs::create_dir_all(&out)?;
                trainer.model.save(out.join("model.ckpt"))?;
            } else {
                trainer.iterate(&data, Some(&out))?;
            }
            trainer.write_log(&out.join("log.csv"))?;
            println!("{} epochs, checkpoint in {}", trainer.log.len(), out.display());
        }
        Command::Encode { model, input, output, bit_map } => {
            let mut model = load_model(&cfg, &model)?;
            let mut tables = TableSet::new(&model)?;
            let x = data::load_image(&input)?;
            let enc = pipeline::encode(&mut model, &mut tables, &x)?;
            fs::write(&output, &enc.bytes)?;
            if let Some(p) = bit_map {
                let (map, h, w) = dsscc_core::metrics::bit_allocation_map(&enc.latents.y, &enc.latents.sigma)?;
                dsscc_core::metrics::write_pgm(p, &map, h, w)?;
            }
            println!("{} payload bits, {} bytes written", enc.rate_bits, enc.bytes.len());
        }
        Command::Decode { model, input, output } => {
            let mut model = load_model(&cfg, &model)?;
            let mut tables = TableSet::new(&model)?;
            let (_, x_hat) = pipeline::decode(&mut model, &mut tables, &fs::read(&input)?)?;
            data::save_png(&output, &x_hat)?;
        }
        Command::Transmit { input, output } => {
            let bytes = fs::read(&input)?;
            let code = cfg.channel.code()?;
            match dsscc_channel::transmit(&bytes, &cfg.channel, &code) {
                Ok(t) => {
                    fs::write(&output, &t.bytes)?;
                    println!("{}", serde_json::to_string(&t.status)?);
                    if dsscc_core::container::unpack(&t.bytes).is_err() {
                        return Err(CliError::Lost("container check failed".into()));
                    }
                }
                Err(e) => return Err(CliError::Lost(e.to_string())),
            }
        }
        Command::Evaluate { model, out, bitstreams, bit_maps } => {
            let mut exp = cfg.experiment(model, out)?;
            exp.write_bitstreams = bitstreams;
            exp.bit_maps = bit_maps;
            let (_, summary) = pipeline::run_experiment(&exp)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::TheoryCheck { models, surrogates, seed, output } => {
            let report = dsscc_theory::run(models, surrogates, seed)?;
            let json = serde_json::to_string_pretty(&report)?;
            match output {
                Some(p) => fs::write(p, &json)?,
                None => println!("{json}"),
            }
            if !report.pass() {
                return Err(CliError::CheckFailed);
            }
        }
        Command::BerSweep { from, to, step, min_bits, seed, output } => {
            if !(step > 0.0) || to < from {
                return Err(CliError::Usage("need step > 0 and to >= from".into()));
            }
            let n = ((to - from) / step + 1e-9).floor() as usize;
            let grid: Vec<f64> = (0..=n).map(|i| from + i as f64 * step).collect();
            let code = cfg.channel.code()?;
            let points = ber::ber_sweep(&code, &grid, min_bits, cfg.channel.max_iters, seed)?;
            let mut w = csv::Writer::from_path(&output)?;
            w.write_record(["snr_db", "bits", "bit_errors", "ber", "ber_upper", "codewords", "codeword_errors"])?;
            for p in &points {
                w.write_record([
                    p.snr_db.to_string(),
                    p.bits.to_string(),
                    p.bit_errors.to_string(),
                    p.ber().to_string(),
                    p.ber_upper().to_string(),
                    p.codewords.to_string(),
                    p.codeword_errors.to_string(),
                ])?;
                eprintln!("{:5.1} dB  ber {:.3e}", p.snr_db, p.ber());
            }
            w.flush()?;
        }
        Command::Campaign { dir } => {
            let mut c = Campaign::new(cfg.campaign.clone(), dir)?.with_log(|m| eprintln!("{m}"));
            let report = c.execute()?;
            println!("{}", serde_json::to_string_pretty(&report.runs)?);
        }
        Command::MakeDataset { count, seed, output } => {
            data::write_cifar10(&output, &data::synthetic(count, seed))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
