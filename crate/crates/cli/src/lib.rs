//! The `vidflow` command-line tool.
//!
//! One binary, six subcommands: `flow` (dense flow between two images),
//! `synth` (synthetic motion dataset), `data` (manifest + caches),
//! `train`, `eval` (k-fold), and `predict`. Every run writes a run
//! manifest capturing the fully resolved configuration, the seed, the
//! thread count, and timestamps, so any output can be reproduced.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

pub mod commands;
pub mod manifest;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub use manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<vidflow_core::data::DataError> for CliError {
    fn from(e: vidflow_core::data::DataError) -> Self {
        use vidflow_core::flow::FlowError;
        match &e {
            vidflow_core::data::DataError::Flow(FlowError::NonFinite(_)) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<vidflow_core::flow::FlowError> for CliError {
    fn from(e: vidflow_core::flow::FlowError) -> Self {
        use vidflow_core::flow::FlowError;
        match &e {
            FlowError::Config(_) => CliError::Usage(e.to_string()),
            FlowError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<vidflow_core::train::TrainError> for CliError {
    fn from(e: vidflow_core::train::TrainError) -> Self {
        use vidflow_core::nn::NnError;
        use vidflow_core::train::TrainError;
        match &e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::Nn(NnError::NonFinite(_)) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<vidflow_core::eval::EvalError> for CliError {
    fn from(e: vidflow_core::eval::EvalError) -> Self {
        use vidflow_core::eval::EvalError;
        match e {
            EvalError::Config(m) => CliError::Usage(m),
            EvalError::Fold { fold, source } => {
                let mut mapped: CliError = source.into();
                let msg = format!("fold {}: {}", fold, mapped);
                mapped = match mapped {
                    CliError::Usage(_) => CliError::Usage(msg),
                    CliError::Data(_) => CliError::Data(msg),
                    CliError::Numeric(_) => CliError::Numeric(msg),
                };
                mapped
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<vidflow_core::checkpoint::CheckpointError> for CliError {
    fn from(e: vidflow_core::checkpoint::CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<vidflow_core::tensor::FtenError> for CliError {
    fn from(e: vidflow_core::tensor::FtenError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vidflow",
    version,
    about = "Dense optical flow plus a conv/GRU video action classifier"
)]
pub struct Cli {
    /// Worker threads for internal parallelism. Results are identical
    /// for any value; 1 is the strictest setting.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dense optical flow between two frames.
    Flow {
        #[command(subcommand)]
        cmd: FlowCmd,
    },
    /// Generate the synthetic motion dataset.
    Synth(commands::synth::SynthArgs),
    /// Dataset manifest and cache management.
    Data {
        #[command(subcommand)]
        cmd: DataCmd,
    },
    /// Train a model on a prepared dataset.
    Train(commands::train::TrainArgs),
    /// Evaluate with cross-validation.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Classify a single video directory with a trained checkpoint.
    Predict(commands::predict::PredictArgs),
}

#[derive(Debug, Subcommand)]
pub enum FlowCmd {
    /// Compute flow from image A to image B.
    Compute(commands::flow::FlowComputeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DataCmd {
    /// Scan a dataset layout into a manifest and optionally cache inputs.
    Prepare(commands::data::DataPrepareArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// K-fold cross-validation on a prepared dataset.
    Kfold(commands::eval::EvalKfoldArgs),
}

/// Shared training hyperparameter flags.
#[derive(Debug, Args, Clone)]
pub struct TrainHyperArgs {
    /// Training epochs.
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Constant learning rate; mutually exclusive with --optimal.
    #[arg(long, conflicts_with = "optimal")]
    pub lr: Option<f64>,
    /// Use the inverse-time schedule eta(t) = 1 / (alpha (t0 + t)).
    #[arg(long)]
    pub optimal: bool,
    /// Regularization strength alpha.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Schedule offset t0 (used with --optimal).
    #[arg(long, default_value_t = 1.0)]
    pub t0: f64,
    /// L2 weight penalty (biases are never regularized).
    #[arg(long)]
    pub l2: bool,
    /// Mini-batch size.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Master seed; all internal randomness derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model capacity profile; defaults to `paper` for 128x128 inputs,
    /// `small` otherwise.
    #[arg(long, value_parser = ["paper", "small"])]
    pub profile: Option<String>,
}

impl TrainHyperArgs {
    pub fn to_train_config(&self) -> Result<vidflow_core::train::TrainConfig, CliError> {
        use vidflow_core::train::{Penalty, Schedule, TrainConfig};
        let schedule = if self.optimal {
            Schedule::Optimal
        } else {
            Schedule::Constant(self.lr.unwrap_or(0.01))
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            alpha: self.alpha,
            t0: self.t0,
            schedule,
            penalty: if self.l2 { Penalty::L2 } else { Penalty::None },
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_model_config(
        &self,
        prep: &vidflow_core::data::PrepParams,
    ) -> vidflow_core::nn::ModelConfig {
        use vidflow_core::nn::ModelConfig;
        let frames = 2 * prep.frame_count;
        let profile = self
            .profile
            .clone()
            .unwrap_or_else(|| if prep.target_size == 128 { "paper" } else { "small" }.into());
        if profile == "paper" {
            let mut cfg = ModelConfig::paper();
            cfg.frame_size = prep.target_size;
            cfg.input_frames = frames;
            cfg
        } else {
            ModelConfig::small(prep.target_size, frames)
        }
    }
}

/// Parse and run; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful terminations
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{}", e);
                return 0;
            }
            eprint!("{}", e);
            return 1;
        }
    };

    let threads = cli.threads.max(1);
    // The global pool can be built once per process; later calls with the
    // same size are a no-op error we can ignore.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();

    let result = match cli.command {
        Command::Flow {
            cmd: FlowCmd::Compute(args),
        } => commands::flow::run(args, threads),
        Command::Synth(args) => commands::synth::run(args, threads),
        Command::Data {
            cmd: DataCmd::Prepare(args),
        } => commands::data::run(args, threads),
        Command::Train(args) => commands::train::run(args, threads),
        Command::Eval {
            cmd: EvalCmd::Kfold(args),
        } => commands::eval::run(args, threads),
        Command::Predict(args) => commands::predict::run(args, threads),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
