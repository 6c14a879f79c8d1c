//! `s4cd` — train, evaluate and inspect diagonal state-space sequence models
//! from the command line.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 data or file error,
//! 4 numeric abort (non-finite value or empty loss mask).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use s4convd::perf::{GpuSpec, KernelResourceUsage};
use s4convd::{Error, Result};

use config::{parse_clip_norm, RunConfig};

#[derive(Parser)]
#[command(
    name = "s4cd",
    version,
    about = "Diagonal state-space sequence models for hourly time-series forecasting",
    after_help = "Set S4CD_THREADS to cap worker threads (default: hardware count)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes `model.s4cd` and `history.csv` into the output
    /// directory and prints the final validation RMSLE.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one temporal split; prints its RMSLE and
    /// writes `predictions.csv`.
    Eval(EvalArgs),
    /// Run a checkpoint over the whole dataset and write `predictions.csv`.
    Predict(PredictArgs),
    /// Write a checkpoint's convolution kernels as a channels x seq_len
    /// CSV matrix.
    KernelDump(KernelDumpArgs),
    /// Time naive vs cache-tiled kernel materialisation.
    BenchTiling(BenchTilingArgs),
    /// Compute streaming-multiprocessor occupancy for a kernel launch.
    Occupancy(OccupancyArgs),
    /// Generate a synthetic meter/weather dataset as loadable CSVs.
    MakeSynth(MakeSynthArgs),
}

/// Configuration shared by the data-facing subcommands. Precedence:
/// built-in defaults, then `--config FILE`, then these flags.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file (`#` comments allowed).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Features per input time step.
    #[arg(long)]
    input_dim: Option<usize>,
    /// Hidden channels, each with its own state-space kernel.
    #[arg(long)]
    measurement_dim: Option<usize>,
    /// State modes per channel.
    #[arg(long)]
    state_dim: Option<usize>,
    /// Outputs per time step.
    #[arg(long)]
    output_dim: Option<usize>,
    /// Dropout rate applied after the activation while training.
    #[arg(long)]
    dropout: Option<f64>,
    /// Window length, in hours.
    #[arg(long)]
    seq_len: Option<usize>,
    /// Kernel family: `s4d` or `s4convd`.
    #[arg(long)]
    kernel_variant: Option<String>,
    /// Convolution evaluation: `fft` or `direct`.
    #[arg(long)]
    conv_mode: Option<String>,

    /// Windows per optimiser step.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Number of passes over the training windows.
    #[arg(long)]
    epochs: Option<usize>,
    /// Running-loss log cadence, in batches.
    #[arg(long)]
    log_interval: Option<usize>,
    /// Global-norm gradient clip; a positive number or `none`.
    #[arg(long)]
    clip_norm: Option<String>,

    /// `synth` for the built-in generator, or a directory holding
    /// `meter.csv`, `weather.csv` and `metadata.csv`.
    #[arg(long)]
    data: Option<String>,
    /// Per-step feature vector: `minimal4` or `full11`.
    #[arg(long)]
    feature_set: Option<String>,
    /// Offset between consecutive training windows, in hours.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    synth_buildings: Option<usize>,
    #[arg(long)]
    synth_weeks: Option<usize>,
    #[arg(long)]
    synth_noise: Option<f64>,
    /// Master seed for data generation, initialisation, shuffling, dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving checkpoints, history and predictions.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        if let Some(v) = self.input_dim {
            c.input_dim = v;
        }
        if let Some(v) = self.measurement_dim {
            c.measurement_dim = v;
        }
        if let Some(v) = self.state_dim {
            c.state_dim = v;
        }
        if let Some(v) = self.output_dim {
            c.output_dim = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        if let Some(v) = self.seq_len {
            c.seq_len = v;
        }
        if let Some(v) = &self.kernel_variant {
            c.kernel_variant = v.parse()?;
        }
        if let Some(v) = &self.conv_mode {
            c.conv_mode = v.parse()?;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            c.momentum = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.log_interval {
            c.log_interval = v;
        }
        if let Some(v) = &self.clip_norm {
            c.clip_norm = parse_clip_norm(v)?;
        }
        if let Some(v) = &self.data {
            c.data = v.clone();
        }
        if let Some(v) = &self.feature_set {
            c.feature_set = v.parse()?;
        }
        if let Some(v) = self.stride {
            c.stride = v;
        }
        if let Some(v) = self.synth_buildings {
            c.synth_buildings = v;
        }
        if let Some(v) = self.synth_weeks {
            c.synth_weeks = v;
        }
        if let Some(v) = self.synth_noise {
            c.synth_noise = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

/// Which temporal split a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to evaluate (default: `<output-dir>/model.s4cd`).
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Temporal split to score.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    split: SplitChoice,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to run (default: `<output-dir>/model.s4cd`).
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct KernelDumpArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to read (default: `<output-dir>/model.s4cd`).
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Output CSV (default: `<output-dir>/kernels.csv`).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchTilingArgs {
    /// State modes in the materialised system.
    #[arg(long, default_value_t = 4096)]
    n: usize,
    /// Kernel taps.
    #[arg(long, default_value_t = 8192)]
    l: usize,
    /// Tile edge lengths to compare, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64])]
    tiles: Vec<usize>,
    /// Timed repetitions per variant (median is reported).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Also write the rows as CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OccupancyArgs {
    /// Threads each block launches.
    #[arg(long, default_value_t = 1024)]
    threads_per_block: usize,
    /// Registers each thread uses.
    #[arg(long, default_value_t = 37)]
    registers_per_thread: usize,
    /// Shared memory each block allocates, in bytes (before the runtime's
    /// per-block overhead is added).
    #[arg(long, default_value_t = 8192)]
    shared_bytes_per_block: usize,
    /// Emit the report as a single JSON object.
    #[arg(long)]
    json: bool,

    // Hardware overrides (defaults describe a Tesla P100 SM).
    #[arg(long)]
    max_threads_per_block: Option<usize>,
    #[arg(long)]
    max_threads_per_sm: Option<usize>,
    #[arg(long)]
    threads_per_warp: Option<usize>,
    #[arg(long)]
    max_registers_per_block: Option<usize>,
    #[arg(long)]
    max_registers_per_sm: Option<usize>,
    #[arg(long)]
    register_alloc_unit: Option<usize>,
    #[arg(long)]
    max_shared_per_block: Option<usize>,
    #[arg(long)]
    runtime_shared_overhead: Option<usize>,
    #[arg(long)]
    shared_per_sm: Option<usize>,
    #[arg(long)]
    sm_count: Option<usize>,
    #[arg(long)]
    max_warps_per_sm: Option<usize>,
}

impl OccupancyArgs {
    fn gpu_spec(&self) -> GpuSpec {
        let mut spec = GpuSpec::default();
        if let Some(v) = self.max_threads_per_block {
            spec.max_threads_per_block = v;
        }
        if let Some(v) = self.max_threads_per_sm {
            spec.max_threads_per_sm = v;
        }
        if let Some(v) = self.threads_per_warp {
            spec.threads_per_warp = v;
        }
        if let Some(v) = self.max_registers_per_block {
            spec.max_registers_per_block = v;
        }
        if let Some(v) = self.max_registers_per_sm {
            spec.max_registers_per_sm = v;
        }
        if let Some(v) = self.register_alloc_unit {
            spec.register_alloc_unit = v;
        }
        if let Some(v) = self.max_shared_per_block {
            spec.max_shared_per_block = v;
        }
        if let Some(v) = self.runtime_shared_overhead {
            spec.runtime_shared_overhead = v;
        }
        if let Some(v) = self.shared_per_sm {
            spec.shared_per_sm = v;
        }
        if let Some(v) = self.sm_count {
            spec.sm_count = v;
        }
        if let Some(v) = self.max_warps_per_sm {
            spec.max_warps_per_sm = v;
        }
        spec
    }
}

#[derive(Args)]
struct MakeSynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory receiving `meter.csv`, `weather.csv` and `metadata.csv`.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => commands::cmd_train(&args.config.resolve()?),
        Command::Eval(args) => {
            let config = args.config.resolve()?;
            let checkpoint = args
                .checkpoint
                .unwrap_or_else(|| commands::default_checkpoint(&config));
            commands::cmd_eval(&config, &checkpoint, args.split)
        }
        Command::Predict(args) => {
            let config = args.config.resolve()?;
            let checkpoint = args
                .checkpoint
                .unwrap_or_else(|| commands::default_checkpoint(&config));
            commands::cmd_predict(&config, &checkpoint)
        }
        Command::KernelDump(args) => {
            let config = args.config.resolve()?;
            let checkpoint = args
                .checkpoint
                .unwrap_or_else(|| commands::default_checkpoint(&config));
            let out = args
                .out
                .unwrap_or_else(|| config.output_dir.join("kernels.csv"));
            commands::cmd_kernel_dump(&config, &checkpoint, &out)
        }
        Command::BenchTiling(args) => commands::cmd_bench_tiling(
            args.n,
            args.l,
            &args.tiles,
            args.repeats,
            args.out.as_deref(),
        ),
        Command::Occupancy(args) => {
            let usage = KernelResourceUsage {
                threads_per_block: args.threads_per_block,
                registers_per_thread: args.registers_per_thread,
                shared_bytes_per_block: args.shared_bytes_per_block,
            };
            commands::cmd_occupancy(&args.gpu_spec(), &usage, args.json)
        }
        Command::MakeSynth(args) => {
            let config = args.config.resolve()?;
            commands::cmd_make_synth(&config, &args.out)
        }
    }
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Checkpoint(_) => 3,
        Error::NonFinite(_) | Error::EmptyMask => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let workers = s4convd::parallel::configure_from_env();
    log::debug!("using {workers} worker thread(s)");

    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code(&error))
        }
    }
}
