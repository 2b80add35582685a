//! `heatpose`: synthetic data generation, training, evaluation and heatmap
//! inspection from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Precision, RunConfig};
use heatpose::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "heatpose", version, about = "Head pose estimation with Bernoulli heatmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset in the BIWI directory layout.
    SynthGen {
        #[command(flatten)]
        common: Common,
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a network and write its checkpoint and history.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Validation dataset, scored after every epoch.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also run the clean / translated / occluded robustness protocol.
        #[arg(long)]
        robustness: bool,
        /// Score decoded ground-truth heatmaps instead of a network.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
    },
    /// Run a checkpoint on one image and dump its heatmaps.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// PNG or PPM image; resized to the network input.
        image: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Network preset: toy, tiny, paper or paper-bg.
    #[arg(long)]
    preset: Option<String>,
    /// Disc radius in heatmap pixels.
    #[arg(long)]
    r_heat: Option<f64>,
    /// Textured (on) or flat black (off) backgrounds for synthetic data.
    #[arg(long)]
    background: Option<OnOff>,
    #[arg(long)]
    precision: Option<PrecisionArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = &common.preset {
        cfg.preset = Some(p.clone());
        cfg.network_file = None;
    }
    if let Some(r) = common.r_heat {
        cfg.codec.r_heat = Some(r);
    }
    if let Some(b) = common.background {
        cfg.synth.background = matches!(b, OnOff::On);
    }
    if let Some(p) = common.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(o) = &common.out {
        cfg.paths.out = Some(o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthGen { common, n } => {
            let mut cfg = resolve(&common)?;
            if let Some(n) = n {
                cfg.synth.n = n;
            }
            commands::synth_gen(&cfg)
        }
        Command::Train { common, data, val, epochs, batch_size, lr } => {
            let mut cfg = resolve(&common)?;
            if let Some(d) = data.data {
                cfg.paths.data = Some(d);
            }
            if let Some(v) = val {
                cfg.paths.val = Some(v);
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = lr {
                cfg.train.lr_init = lr;
            }
            commands::train(&cfg)
        }
        Command::Eval { common, data, checkpoint, robustness, oracle } => {
            let mut cfg = resolve(&common)?;
            if let Some(d) = data.data {
                cfg.paths.data = Some(d);
            }
            if let Some(c) = checkpoint {
                cfg.paths.checkpoint = Some(c);
            }
            commands::eval(&cfg, robustness, oracle)
        }
        Command::Inspect { common, checkpoint, image } => {
            let mut cfg = resolve(&common)?;
            if let Some(c) = checkpoint {
                cfg.paths.checkpoint = Some(c);
            }
            commands::inspect(&cfg, &image)
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    match e {
        Error::MissingPath(_) | Error::Usage(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::from(exit_status(&e))
        }
    }
}
