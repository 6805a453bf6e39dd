mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::commands::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RBM_ANNEAL_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "rbm-anneal", version, about = "Train and evaluate RBMs on bars and stripes with CD-n or a simulated annealer")]
#[command(args_override_self = true, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a bars-and-stripes corpus and split it into train/test files.
    GenData(GenDataArgs),
    /// Train an RBM and write metrics and checkpoints.
    Train(TrainArgs),
    /// Evaluate checkpoints: test accuracy and/or exact log-likelihood.
    Eval(EvalArgs),
    /// Corrupt test records and reconstruct them with a trained model.
    Reconstruct(ReconstructArgs),
    /// Embed an RBM into a Chimera graph and report the chains.
    Embed(EmbedArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Read `key = value` defaults from this file; command-line flags win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory (must exist). Defaults to $RBM_ANNEAL_OUT_DIR, then `out`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

impl Common {
    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(default_out_dir)
    }
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Grid side length.
    #[arg(long, default_value_t = 8)]
    pub side: usize,
    /// Number of unique records to draw from the pool.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    /// Records in the training split; the rest go to the test split.
    /// Without it every record is written to `records.txt`.
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    /// Contrastive divergence with one Gibbs step.
    Cd1,
    /// Contrastive divergence with --cd-steps Gibbs steps.
    CdN,
    /// Simulated annealer on the Chimera embedding.
    Anneal,
    /// Exact model expectations (small models only).
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gibbs,
    Anneal,
}

/// Annealer and embedding settings shared by several commands.
#[derive(Args, Debug, Clone)]
pub struct AnnealArgs {
    /// Scale parameter S dividing the model coefficients.
    #[arg(long, default_value_t = 4.0)]
    pub s_param: f64,
    /// Annealer reads per update; 0 uses the batch size.
    #[arg(long, default_value_t = 0)]
    pub reads: usize,
    /// Metropolis sweeps per read.
    #[arg(long, default_value_t = 1000)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub beta_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta_max: f64,
    /// Clip problem coefficients to [-1, 1].
    #[arg(long)]
    pub clip: bool,
    /// Chimera size m (m x m cells of 8 qubits).
    #[arg(long, default_value_t = 16)]
    pub chimera_m: usize,
    /// File listing dead qubit indices, one per line.
    #[arg(long, value_name = "FILE")]
    pub dead_file: Option<PathBuf>,
    /// Ferromagnetic coupling binding each chain.
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub chain_coupling: f64,
    /// Reads per annealer inference call (classification, reconstruction).
    #[arg(long, default_value_t = 10)]
    pub inference_reads: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training records.
    #[arg(long, value_name = "FILE")]
    pub train_file: PathBuf,
    /// Test records used for accuracy.
    #[arg(long, value_name = "FILE")]
    pub test_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SamplerArg::Cd1)]
    pub sampler: SamplerArg,
    /// Gibbs steps for `--sampler cd-n`.
    #[arg(long, default_value_t = 1)]
    pub cd_steps: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Records per update; 0 is full batch.
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    /// Initial weights are uniform in [-init-scale, init-scale].
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test accuracy every N epochs; 0 disables.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Classification method for the accuracy metric.
    #[arg(long, value_enum, default_value_t = MethodArg::Gibbs)]
    pub eval_method: MethodArg,
    /// Gibbs cycles per classification.
    #[arg(long, default_value_t = 50)]
    pub cycles: usize,
    /// Majority vote over this many classification passes per test record.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: u64,
    /// Exact training log-likelihood every N epochs; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub loglik_every: usize,
    /// Write ckpt_<epoch>.rbm every N epochs (the initial and final
    /// parameters are always written); 0 keeps only those two.
    #[arg(long, default_value_t = 50)]
    pub checkpoint_every: usize,
    /// Record wall-clock seconds per epoch in the metrics CSV.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub anneal: AnnealArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint files or glob patterns such as 'run/ckpt_*.rbm'.
    #[arg(long, value_name = "PATH", num_args = 1.., required = true)]
    pub checkpoints: Vec<String>,
    /// Records for the accuracy metric.
    #[arg(long, value_name = "FILE")]
    pub test_file: Option<PathBuf>,
    /// Records for the log-likelihood metric.
    #[arg(long, value_name = "FILE")]
    pub train_file: Option<PathBuf>,
    /// Report exact per-record log-likelihood of --train-file.
    #[arg(long)]
    pub loglik: bool,
    #[arg(long, value_enum, default_value_t = MethodArg::Gibbs)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 50)]
    pub cycles: usize,
    /// Majority vote over this many classification passes per test record.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub anneal: AnnealArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CorruptArg {
    /// Only the two label bits.
    Labels,
    /// A 4x4 block of 16 bits.
    Block16,
    /// Every bit.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CorruptModeArg {
    Randomize,
    Flip,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Records to corrupt.
    #[arg(long, value_name = "FILE")]
    pub data_file: PathBuf,
    #[arg(long, value_enum, default_value_t = CorruptArg::Labels)]
    pub corrupt: CorruptArg,
    #[arg(long, value_enum, default_value_t = CorruptModeArg::Randomize)]
    pub mode: CorruptModeArg,
    /// Top-left cell of the corrupted block.
    #[arg(long, default_value_t = 2)]
    pub block_row: usize,
    #[arg(long, default_value_t = 2)]
    pub block_col: usize,
    /// Records taken from the start of the file; 0 uses all.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Gibbs)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 50)]
    pub cycles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub anneal: AnnealArgs,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 64)]
    pub visible: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, value_name = "FILE")]
    pub dead_file: Option<PathBuf>,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub chain_coupling: f64,
}

fn run() -> Result<(), CliError> {
    let argv: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let command = Cli::command();
    let argv = config::merge_config_file(&command, argv)?;
    let matches = command.clone().try_get_matches_from(argv).map_err(CliError::Usage)?;
    let cli = Cli::from_arg_matches(&matches).map_err(CliError::Usage)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let resolved = config::resolved_config(&command, name, sub);
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a, &resolved),
        Command::Train(a) => commands::train(&a, &resolved),
        Command::Eval(a) => commands::eval(&a, &resolved),
        Command::Reconstruct(a) => commands::reconstruct(&a, &resolved),
        Command::Embed(a) => commands::embed(&a, &resolved),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            ExitCode::from(e.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
