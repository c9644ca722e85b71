use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use semsal::pipeline::{PipelineConfig, Runner, Stage};
use semsal::ranker::HingeVariant;
use semsal::synth::{generate, SynthConfig};
use semsal::{Error, Result};

/// Semantic saliency ranking and saliency map fusion.
#[derive(Parser, Debug)]
#[command(name = "semsal", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Run directory holding every stage's artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Hinge {
    AsWritten,
    Margin,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<u32>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    hinge: Option<Hinge>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate the manifest and every file it names.
    Ingest,
    /// Hybrid semantic + scene retrieval for every image.
    Retrieve,
    /// Build labeled proposal pairs.
    Pairs,
    /// Train the ranker on the pair file.
    Train(TrainFlags),
    /// Score proposals, choose q, select boxes.
    Rank {
        /// Also write each coarse mask as PGM.
        #[arg(long)]
        coarse_masks: bool,
    },
    /// Fuse candidate maps inside the selected boxes.
    Fuse,
    /// Score the fused maps against GT.
    Eval,
    /// All stages in order.
    Pipeline {
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        coarse_masks: bool,
    },
    /// Write a synthetic dataset with a planted saliency latent to --out.
    Synth {
        #[arg(long, default_value_t = 20)]
        images: usize,
        #[arg(long, default_value_t = 5)]
        proposals: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 64)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
    },
}

fn resolve_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = &common.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn apply_train(cfg: &mut PipelineConfig, t: &TrainFlags) {
    if let Some(e) = t.epochs {
        cfg.train.epochs = e;
    }
    if let Some(h) = &t.hidden {
        cfg.train.hidden = h.clone();
    }
    if let Some(h) = t.hinge {
        cfg.train.variant = match h {
            Hinge::AsWritten => HingeVariant::AsWritten,
            Hinge::Margin => HingeVariant::Margin,
        };
    }
    if let Some(lr) = t.learning_rate {
        cfg.train.learning_rate = lr;
    }
}

fn run(command: Command, common: &Common) -> Result<()> {
    if let Command::Synth {
        images,
        proposals,
        size,
        feature_dim,
        noise,
        train_fraction,
    } = command
    {
        let out = common
            .out
            .clone()
            .ok_or_else(|| Error::Config("synth needs --out DIR".into()))?;
        let cfg = SynthConfig {
            images,
            proposals,
            width: size,
            height: size,
            feature_dim,
            noise,
            train_fraction,
            seed: common.seed.unwrap_or(0),
            ..SynthConfig::default()
        };
        generate(&cfg)?.write(&out)?;
        log::info!("wrote {} images to {}", images, out.display());
        return Ok(());
    }
    let mut cfg = resolve_config(common)?;
    let stage = match &command {
        Command::Ingest => Some(Stage::Ingest),
        Command::Retrieve => Some(Stage::Retrieve),
        Command::Pairs => Some(Stage::Pairs),
        Command::Train(t) => {
            apply_train(&mut cfg, t);
            Some(Stage::Train)
        }
        Command::Rank { coarse_masks } => {
            cfg.coarse_masks |= coarse_masks;
            Some(Stage::Rank)
        }
        Command::Fuse => Some(Stage::Fuse),
        Command::Eval => Some(Stage::Eval),
        Command::Pipeline { train, coarse_masks } => {
            apply_train(&mut cfg, train);
            cfg.coarse_masks |= coarse_masks;
            None
        }
        Command::Synth { .. } => unreachable!(),
    };
    let runner = Runner::new(cfg)?;
    match stage {
        Some(Stage::Eval) => {
            runner.run(Stage::Eval)?;
            print_report(&runner);
        }
        Some(s) => {
            runner.run(s)?;
        }
        None => {
            runner.run_all()?;
            print_report(&runner);
        }
    }
    Ok(())
}

fn print_report(runner: &Runner) {
    if let Ok(text) = std::fs::read_to_string(runner.out_path("report.txt")) {
        print!("{text}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let common = cli.common;
    let level = match common.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command, &common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
