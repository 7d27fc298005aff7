use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sitfuse::pipeline::{self, PipelineConfig};

#[derive(Parser)]
#[command(name = "sitfuse", version, about = "Self-supervised smoke and fire masking pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes, truth rasters and labels
    Gen(Common),
    /// Train the DBN encoder
    TrainEncoder(Common),
    /// Train the IIC cluster tree
    TrainTree(Common),
    /// Produce label maps, context and per-target masks
    Predict(Common),
    /// Score masks against references
    Evaluate(Common),
    /// Fuse stream masks and restore retrievals
    Fuse(Common),
    /// Track mask instances through the scene sequence
    Track(Common),
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set tree.k=4
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, replacing output_dir from the config
    #[arg(long)]
    out: Option<PathBuf>,
}

type Stage = fn(&PipelineConfig) -> sitfuse::Result<()>;

fn run(cli: Cli) -> sitfuse::Result<()> {
    let (args, stage): (Common, Stage) = match cli.command {
        Command::Gen(a) => (a, pipeline::cmd_gen),
        Command::TrainEncoder(a) => (a, pipeline::cmd_train_encoder),
        Command::TrainTree(a) => (a, pipeline::cmd_train_tree),
        Command::Predict(a) => (a, pipeline::cmd_predict),
        Command::Evaluate(a) => (a, pipeline::cmd_evaluate),
        Command::Fuse(a) => (a, pipeline::cmd_fuse),
        Command::Track(a) => (a, pipeline::cmd_track),
    };
    let threads = match std::env::var("SITFUSE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| sitfuse::Error::Invalid(format!("SITFUSE_THREADS must be a count, got `{v}`")))?,
        Err(_) => 0,
    };
    sitfuse::par::configure_threads(threads);
    let mut cfg = PipelineConfig::load(&args.config, &args.overrides)?;
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    stage(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sitfuse: error: {e}");
            ExitCode::FAILURE
        }
    }
}
