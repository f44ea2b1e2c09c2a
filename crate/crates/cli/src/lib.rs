//! Command-line front end: scene generation, capture, compensation,
//! training, evaluation and the benchmark grid.

mod commands;
pub mod png;
pub mod settings;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

pub use commands::{bench_grid, BenchRow, BENCH_HEADER, BENCH_SCHEMA};

#[derive(Parser, Debug)]
#[command(name = "polarsim", version, about = "Sparse polarization sensor simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each one overrides the same key in the
/// `--config` file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Scene kind for `gen`, scene file for `capture` and `eval`.
    #[arg(long, global = true)]
    pub scene: Option<String>,
    /// conventional | sparse
    #[arg(long, global = true)]
    pub layout: Option<String>,
    /// Polarization ratio as a denominator: 4, 16 or 64.
    #[arg(long, global = true)]
    pub r: Option<u32>,
    /// Polarizer transmittance.
    #[arg(long, global = true)]
    pub t: Option<f64>,
    /// Shot-noise factor F_n.
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    /// nearest | bilinear | joint-bilateral | toy-sna
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Network checkpoint.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a procedural scene to POLR (r,g,b,s0,s1,s2).
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Capture a scene file with a simulated sensor.
    Capture {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct dense Stokes and RGB from a raw capture.
    Compensate {
        #[command(flatten)]
        common: Common,
        /// Raw capture written by `capture`.
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Train the compensation network on a procedural dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compare a prediction file with a ground-truth scene file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Sweep sensor × ratio × noise × method and write a CSV.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Write the analytic resolution and SNR curves.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Print the pixel layout as glyphs.
    Layout {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
    },
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    commands::dispatch(cli.command)
}
