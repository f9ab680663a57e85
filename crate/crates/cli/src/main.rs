//! `t2i`: dataset generation, encoder pretraining, GAN training, evaluation
//! and plotting.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "t2i", version, about = "Text-to-image GAN training with contrastive learning")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the GAN contrastive weight.
    #[arg(long = "lambda-c", global = true)]
    lambda_c: Option<f64>,
    /// Overrides the contrastive temperature (pretraining and GAN).
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Checkpoint to resume from or evaluate; a directory evaluates every
    /// GAN checkpoint in it.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Prints the effective configuration as TOML and exits.
    #[arg(long = "print-config", global = true)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Renders the synthetic shapes dataset and writes its manifest.
    MakeData,
    /// Pretrains the image and text encoders.
    Pretrain,
    /// Trains the GAN against frozen pretrained encoders.
    Train {
        /// Runs the configured λ_c and λ_c = 0 with matched seeds and writes
        /// a comparison report.
        #[arg(long)]
        ab: bool,
    },
    /// Trains the classifier that supplies IS probabilities and FID features.
    TrainClassifier,
    /// Computes IS, FID and R-precision for a GAN checkpoint.
    Evaluate {
        /// Scores the real test images in place of generated ones.
        #[arg(long = "real-as-fake")]
        real_as_fake: bool,
    },
    /// Renders loss curves (CSV inputs) and metric-vs-checkpoint plots
    /// (report JSON inputs) as SVG.
    Plot {
        /// Loss CSV files and metric report JSON files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Column drawn in the overlay plot when several CSVs are given.
        #[arg(long, default_value = "L_c")]
        column: String,
    },
}

/// Failure split by exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;

/// Tags errors from the compute phase.
pub trait RuntimeExt<T> {
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> RuntimeExt<T> for Result<T, E> {
    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Tags errors from the validation phase.
pub trait ValidationExt<T> {
    fn invalid(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> ValidationExt<T> for Result<T, E> {
    fn invalid(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Validation(e.into()))
    }
}

fn effective_config(args: &GlobalArgs) -> CmdResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).invalid()?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.apply_seed();
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(lc) = args.lambda_c {
        cfg.gan.train.lambda_c = lc;
    }
    if let Some(tau) = args.tau {
        cfg.matching.tau = tau;
        cfg.gan.train.tau = tau;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CmdResult<()> {
    let cfg = effective_config(&cli.global)?;
    if cli.global.print_config {
        print!("{}", cfg.to_toml().invalid()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::Validation(anyhow::anyhow!(
            "no subcommand given; see `t2i --help`"
        )));
    };
    cfg.validate().invalid()?;
    let ckpt = cli.global.checkpoint.as_deref();
    if let Some(p) = ckpt {
        if !p.exists() {
            return Err(Failure::Validation(anyhow::anyhow!("--checkpoint {} does not exist", p.display())));
        }
    }
    match command {
        Command::MakeData => commands::make_data(&cfg),
        Command::Pretrain => commands::pretrain(&cfg, ckpt),
        Command::Train { ab } if ab => commands::train_ab(&cfg),
        Command::Train { .. } => commands::train(&cfg, ckpt),
        Command::TrainClassifier => commands::train_classifier(&cfg),
        Command::Evaluate { real_as_fake } => commands::evaluate(&cfg, ckpt, real_as_fake),
        Command::Plot { inputs, column } => plot::plot_inputs(&inputs, &cfg.out_dir.join("plots"), &column),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, err) = match &f {
                Failure::Validation(e) => ("invalid configuration", e),
                Failure::Runtime(e) => ("error", e),
            };
            eprintln!("{kind}: {err:#}");
            ExitCode::from(f.code())
        }
    }
}
