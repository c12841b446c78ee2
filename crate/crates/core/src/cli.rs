//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablate::{format_table, parse_switches, run_ablation};
use crate::bench::stream_bench;
use crate::datasim::DataSource;
use crate::dsp::{read_wav, write_wav, Waveform};
use crate::error::{Error, Result};
use crate::metrics::si_sdr;
use crate::model::checkpoint::Checkpoint;
use crate::model::{parse_kv, Model, ModelConfig};
use crate::nn::count_params;
use crate::stream::{enhance_offline, enhance_stream, HOP};
use crate::train::{TrainConfig, Trainer};

#[derive(Parser, Debug)]
#[command(name = "subband-se", version, about = "Streaming single-channel speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write per-epoch checkpoints.
    Train(TrainArgs),
    /// Enhance a 16 kHz mono WAV file.
    Enhance(EnhanceArgs),
    /// Time per-frame streaming inference in single precision.
    StreamBench(BenchArgs),
    /// Print the SI-SDR of an estimate against a reference.
    Metrics(MetricsArgs),
    /// Print parameter counts per module.
    Inspect(InspectArgs),
    /// Train and evaluate the MulCA / phase-branch ablation grid.
    Ablate(AblateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory with clean.txt, noise.txt and optionally rir.txt manifests.
    #[arg(long, conflicts_with = "synthetic")]
    pub data_dir: Option<PathBuf>,
    /// Use the built-in synthetic corpus (the default).
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key=value` file with model and training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Process hop by hop through the streaming engine.
    #[arg(long)]
    pub stream: bool,
    /// Samples per push in streaming mode.
    #[arg(long, default_value_t = HOP)]
    pub chunk: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Checkpoint to time; a freshly initialised full-size model if omitted.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Also print a machine-readable `key=value` dump.
    #[arg(long)]
    pub kv: bool,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long, conflicts_with = "config")]
    pub ckpt: Option<PathBuf>,
    /// Model config to instantiate instead of loading a checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated components to switch: `mulca`, `phase`.
    #[arg(long, default_value = "mulca,phase")]
    pub flags: String,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub data: DataArgs,
}

/// Model and training settings from an optional `key=value` file. Unknown
/// keys are an error.
pub fn load_settings(path: Option<&Path>) -> Result<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    if let Some(path) = path {
        let pairs = parse_kv(&std::fs::read_to_string(path)?)?;
        let rest = model.apply_kv(&pairs)?;
        let rest: std::collections::BTreeMap<_, _> = pairs
            .into_iter()
            .filter(|(k, _)| rest.contains(k))
            .collect();
        if let Some(k) = train.apply_kv(&rest)?.first() {
            return Err(Error::InvalidConfig(format!("unknown key `{k}`")));
        }
    }
    Ok((model, train))
}

fn source(data: &DataArgs) -> Result<DataSource> {
    match &data.data_dir {
        Some(dir) => DataSource::from_manifests(dir),
        None => Ok(DataSource::Synthetic),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let (model_cfg, mut train_cfg) = load_settings(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                train_cfg.seed = seed;
            }
            train_cfg.checkpoint_dir = Some(a.out.clone());
            let data = source(&a.data)?;
            let mut trainer = match &a.resume {
                Some(path) => Trainer::resume(Checkpoint::load(path)?, train_cfg, data)?,
                None => Trainer::new(&model_cfg, train_cfg, data)?,
            };
            writeln!(out, "parameters: {}", count_params(&trainer.model))?;
            for _ in 0..a.epochs {
                let report = trainer.run_epoch()?;
                writeln!(out, "{report}")?;
                out.flush()?;
            }
            writeln!(out, "checkpoint: {}", a.out.join("latest.ckpt").display())?;
        }
        Command::Enhance(a) => {
            let ck = Checkpoint::load(&a.ckpt)?;
            let wave = read_wav(&a.input)?;
            let enhanced = if a.stream {
                enhance_stream(&ck.model, &wave.samples, a.chunk)?
            } else {
                enhance_offline(&ck.model, &wave.samples, ck.model.config.mode)?
            };
            let clipped = write_wav(&a.out, &Waveform::new(enhanced))?;
            writeln!(out, "wrote {} ({} samples)", a.out.display(), wave.len())?;
            if clipped > 0 {
                writeln!(out, "warning: {clipped} samples clipped")?;
            }
        }
        Command::StreamBench(a) => {
            let model = match &a.ckpt {
                Some(path) => Checkpoint::load(path)?.model,
                None => Model::init(&ModelConfig::default(), 0)?,
            };
            let report = stream_bench(&model.cast::<f32>(), a.seconds, a.reps)?;
            writeln!(out, "{report}")?;
            writeln!(
                out,
                "real-time: {}",
                if report.real_time() { "yes" } else { "no" }
            )?;
            if a.kv {
                writeln!(out, "frame_ms={}", report.frame_ms)?;
                writeln!(out, "frames={}", report.frames)?;
                writeln!(out, "mean_ms={}", report.mean_ms)?;
                writeln!(out, "median_ms={}", report.median_ms)?;
                writeln!(out, "p99_ms={}", report.p99_ms)?;
                writeln!(out, "rtf={}", report.rtf)?;
                writeln!(out, "latency_samples={}", report.latency_samples)?;
                writeln!(out, "platform={}", report.platform)?;
            }
        }
        Command::Metrics(a) => {
            let est = read_wav(&a.est)?;
            let reference = read_wav(&a.reference)?;
            writeln!(out, "si_sdr_db={:.4}", si_sdr(&est.samples, &reference.samples)?)?;
        }
        Command::Inspect(a) => {
            let model = match (&a.ckpt, &a.config) {
                (Some(path), _) => Checkpoint::load(path)?.model,
                (None, cfg) => Model::zeros(&load_settings(cfg.as_deref())?.0)?,
            };
            for (name, n) in model.param_breakdown() {
                writeln!(out, "{name:<24} {n:>10}")?;
            }
            let total = count_params(&model);
            writeln!(out, "{:<24} {:>10} ({:.2} M)", "total", total, total as f64 / 1e6)?;
        }
        Command::Ablate(a) => {
            let (model_cfg, mut train_cfg) = load_settings(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                train_cfg.seed = seed;
            }
            let switches = parse_switches(&a.flags)?;
            let rows = run_ablation(&model_cfg, &train_cfg, &source(&a.data)?, &switches, a.epochs)?;
            write!(out, "{}", format_table(&rows))?;
        }
    }
    Ok(())
}
