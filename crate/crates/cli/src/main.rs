use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rstt::{Fusion, Preset};
use rstt_cli::commands::{self, GradcheckSettings};
use rstt_cli::{CliResult, RunConfig};

/// Space-time video super-resolution: 4 frames in, 7 frames at 4x size out.
#[derive(Parser)]
#[command(name = "rstt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic clips; writes checkpoint.rstt and loss.csv to --out.
    Train(Common),
    /// Upscale the four frames in --in; writes frame_0001..frame_0007.png to --out.
    Infer(Common),
    /// Time forwards per preset; prints a table and writes bench.csv to --out if given.
    Bench(Common),
    /// Finite-difference check of every differentiable op and of a reduced model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Coordinates sampled per parameter tensor in model-level checks.
        #[arg(long, default_value_t = 3)]
        coords: usize,
        #[arg(long, hide = true, default_value_t = 0.0)]
        corrupt: f64,
    },
    /// Export decoder cross-attention maps as grayscale PNGs plus manifest.csv.
    AttnDump(Common),
}

/// Flags override the values read from --config.
#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    fusion: Option<Fusion>,
    /// Enable the residual blocks before the reconstruction conv.
    #[arg(long)]
    recon: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
}

impl Common {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.preset {
            cfg.preset = p;
            cfg.bench.presets = vec![p];
        }
        if let Some(f) = self.fusion {
            cfg.fusion = f;
        }
        cfg.recon |= self.recon;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.input {
            cfg.input = Some(p.clone());
        }
        if let Some(p) = &self.out {
            cfg.output = Some(p.clone());
        }
        if let Some(p) = &self.checkpoint {
            cfg.checkpoint = Some(p.clone());
        }
        if let Some(n) = self.iters {
            cfg.train.max_iters = n;
        }
        if let Some(n) = self.reps {
            cfg.bench.reps = n;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let log = &mut io::stdout();
    match cli.command {
        Command::Train(c) => commands::train(&c.resolve()?, log).map(drop),
        Command::Infer(c) => commands::infer(&c.resolve()?, log).map(drop),
        Command::Bench(c) => commands::bench(&c.resolve()?, log).map(drop),
        Command::Gradcheck { common, coords, corrupt } => {
            let cfg = common.resolve()?;
            commands::gradcheck(&GradcheckSettings { coords, seed: cfg.seed, corrupt }, log)?.verdict()
        }
        Command::AttnDump(c) => commands::attn_dump(&c.resolve()?, log).map(drop),
    }
}

fn main() -> ExitCode {
    rstt_cli::alloc::retain_freed_memory();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
