//! Command-line front end: `synth`, `train`, `eval`, `count` and
//! `export-attention`.

mod commands;
mod config;

pub use commands::{cmd_count_text, cmd_eval, cmd_export_attention, cmd_synth, cmd_train, PUBLISHED_PARAMS};
pub use config::{DataSection, OutputSection, RunConfig, SynthSection};

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::events::SensorSize;
use crate::model::{ModelConfig, Preset};

#[derive(Debug, Parser)]
#[command(
    name = "spikmamba",
    version,
    about = "Spiking Mamba action recognition on event streams"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization and shuffling; overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Reuse a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Tiny,
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tiny => Preset::Tiny,
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset from `[data.synthetic]`.
    Synth,
    /// Train a model on `data.train`.
    Train,
    /// Report top-1 accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest (default: `data.eval` from the config).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Print parameter count and forward GFLOPs.
    Count {
        /// Use a built-in geometry instead of the config's model section.
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
    },
    /// Write attention saliency maps for one clip as PGM images.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sensor height for CSV input.
        #[arg(long, requires = "sensor_width")]
        sensor_height: Option<u32>,
        #[arg(long, requires = "sensor_height")]
        sensor_width: Option<u32>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<Option<RunConfig>> {
    path.map(|p| RunConfig::load(p)).transpose()
}

fn require_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    load_config(path)?.ok_or_else(|| Error::Usage("--config is required".into()))
}

/// Runs a parsed command line, writing user-facing output to `out`.
pub fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| dispatch(cli, out))
}

fn dispatch(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    match &cli.command {
        Command::Synth => {
            let mut cfg = require_config(cli.config.as_ref())?;
            let manifest = cmd_synth(&mut cfg, cli.seed, cli.force)?;
            writeln!(out, "wrote {}", manifest.display())?;
        }
        Command::Train => {
            let mut cfg = require_config(cli.config.as_ref())?;
            let report = cmd_train(&mut cfg, cli.seed, cli.force, out)?;
            if let Some(last) = report.epochs.last() {
                writeln!(out, "final train_acc {:.4}", last.train_acc)?;
            }
        }
        Command::Eval {
            checkpoint,
            data,
            batch_size,
        } => {
            let cfg = load_config(cli.config.as_ref())?;
            let data = data
                .clone()
                .or_else(|| cfg.as_ref().and_then(|c| c.data.eval.clone()))
                .ok_or_else(|| Error::Usage("--data is required".into()))?;
            let acc = cmd_eval(checkpoint, &data, cfg.as_ref(), *batch_size)?;
            writeln!(out, "accuracy: {acc:.4}")?;
        }
        Command::Count { preset } => {
            let preset = preset.map(Preset::from);
            let model = match preset {
                Some(p) => ModelConfig::preset(p),
                None => load_config(cli.config.as_ref())?.unwrap_or_default().model,
            };
            model.validate()?;
            write!(out, "{}", cmd_count_text(&model, preset))?;
        }
        Command::ExportAttention {
            checkpoint,
            events,
            out: dir,
            sensor_height,
            sensor_width,
        } => {
            let sensor = sensor_height.zip(*sensor_width).map(|(h, w)| SensorSize::new(h, w));
            let paths = cmd_export_attention(checkpoint, events, dir, sensor)?;
            writeln!(out, "wrote {} frames to {}", paths.len(), dir.display())?;
        }
    }
    Ok(())
}
