use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kvaf_cli::commands::{self, Manifest};
use kvaf_cli::config::RunConfig;
use kvaf_cli::{exit_code, threads_from_env, UsageError};
use kvaf_fusion::train::Stage;

#[derive(Parser)]
#[command(name = "kvaf", version, about = "Kinematic action field rendering, recovery and fusion training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed everywhere it is used.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Training stage for fuse-train: frozen keeps the fusion modules fixed.
    #[arg(long, global = true, value_enum)]
    stage: Option<StageArg>,
    /// Primary input: episode directory for render/roundtrip, frame
    /// directory for recover/event-target.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Render an episode to KVAF frames.
    Render,
    /// Recover relative actions from KVAF frames.
    Recover,
    /// Render, recover and evaluate against the acceptance bounds.
    Roundtrip,
    /// Train the fusion model on moving-square toy videos.
    FuseTrain,
    /// Frame-difference event target of a video.
    EventTarget,
    /// Write synthetic episodes.
    Synth,
}

#[derive(ValueEnum, Clone, Copy)]
enum StageArg {
    Frozen,
    Full,
}

fn run(cli: &Cli) -> anyhow::Result<Manifest> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads_from_env(std::env::var("KVAF_THREADS").ok().as_deref())? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    threads_from_env(std::env::var("KVAF_THREADS").ok().as_deref())?;

    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(stage) = cli.stage {
        cfg.stage = match stage {
            StageArg::Frozen => Stage::FusionFrozen,
            StageArg::Full => Stage::Full,
        };
    }
    if let Some(input) = &cli.input {
        match cli.command {
            Command::Render | Command::Roundtrip => cfg.paths.episode = Some(input.clone()),
            Command::Recover | Command::EventTarget => cfg.paths.frames = Some(input.clone()),
            Command::FuseTrain | Command::Synth => {
                return Err(UsageError("--input is not used by this command".into()).into());
            }
        }
    }
    cfg.validate()?;
    let out = &cli.out;
    match cli.command {
        Command::Render => commands::render(&cfg, out),
        Command::Recover => commands::recover(&cfg, out),
        Command::Roundtrip => commands::roundtrip(&cfg, out),
        Command::FuseTrain => commands::fuse_train(&cfg, out),
        Command::EventTarget => commands::event_target(&cfg, out),
        Command::Synth => commands::synth(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(m) => {
            println!("{}: wrote {} artifacts to {}", m.command, m.artifacts.len(), cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
