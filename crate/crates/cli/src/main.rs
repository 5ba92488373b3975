//! `pvdeblur`: synthesize sequences, estimate flow, build pixel volumes, deblur and evaluate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pvdeblur::FlowParams;

#[derive(Parser, Debug)]
#[command(
    name = "pvdeblur",
    version,
    about = "Pixel-volume motion compensation for video deblurring"
)]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides the seed of generated scenes.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene: sharp and blurred PNGs, ground-truth .flo files and a manifest.
    Synth {
        /// Scene config (`key=value` lines).
        config: PathBuf,
    },
    /// Estimate TV-L1 flow mapping CURRENT onto PREVIOUS.
    Flow {
        previous: PathBuf,
        current: PathBuf,
        /// Ground-truth .flo to report the endpoint error against.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[command(flatten)]
        params: FlowArgs,
    },
    /// Pixel-volume operations on a reference frame and a flow field.
    Pv {
        #[arg(value_enum)]
        mode: PvMode,
        reference: PathBuf,
        flow: PathBuf,
        /// Window sizes; a list runs one pass per size.
        #[arg(long, value_delimiter = ',', default_value = "5")]
        k: Vec<usize>,
        /// Ground-truth target frame (required by `stats` and `ideal`).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Color-difference tolerances (8-bit levels) for `stats`.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8")]
        tolerances: Vec<u32>,
    },
    /// Backward-warp a reference frame with a flow field.
    Warp { reference: PathBuf, flow: PathBuf },
    /// Run the recurrent deblurring loop on one or more sequence manifests.
    Deblur {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value_t = DeblurrerArg::Aggregate)]
        deblurrer: DeblurrerArg,
        /// Consensus bandwidth of the aggregation deblurrer.
        #[arg(long, default_value_t = 0.08)]
        sigma_c: f32,
        /// Alignment search radius of the reported metrics.
        #[arg(long, default_value_t = 10)]
        radius: usize,
        #[command(flatten)]
        params: FlowArgs,
    },
    /// Compare two directories of PNG frames (matched by sorted file name).
    Eval {
        estimates: PathBuf,
        truth: PathBuf,
        #[arg(long, default_value_t = 10)]
        radius: usize,
    },
    /// Pick the flow lambda minimizing the blur-invariant loss over sequence manifests.
    Calibrate {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.15,0.4,1.0")]
        lambdas: Vec<f32>,
        /// Pair kinds to calibrate on.
        #[arg(long, value_delimiter = ',', default_value = "ss,bb,bs,sb")]
        pairs: Vec<PairArg>,
        #[command(flatten)]
        params: FlowArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PvMode {
    Build,
    Stats,
    Majority,
    Ideal,
    Naive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DeblurrerArg {
    Passthrough,
    Aggregate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PairArg {
    Ss,
    Bb,
    Bs,
    Sb,
}

#[derive(Args, Debug, Clone)]
struct FlowArgs {
    #[arg(long, default_value_t = 0.15)]
    lambda: f32,
    #[arg(long, default_value_t = 0.3)]
    theta: f32,
    #[arg(long, default_value_t = 0.25)]
    tau: f32,
    #[arg(long, default_value_t = 5)]
    warps: usize,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
    #[arg(long, default_value_t = 10)]
    levels: usize,
    #[arg(long, default_value_t = 0.5)]
    zoom: f32,
    /// Median filter radius applied after each pyramid level.
    #[arg(long, default_value_t = 1)]
    median: usize,
}

impl FlowArgs {
    fn params(&self) -> FlowParams {
        FlowParams {
            lambda: self.lambda,
            theta: self.theta,
            tau: self.tau,
            warps: self.warps,
            inner_iterations: self.iterations,
            pyramid_levels: self.levels,
            zoom: self.zoom,
            median_radius: self.median,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
