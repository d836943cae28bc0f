//! `deepswitch`: simulate paths, train dual penalties and primal policies,
//! evaluate bounds, certify lattice instances.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "deepswitch", version = env!("DEEPSWITCH_GIT_DESCRIBE"), about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand; each overrides the matching config field.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; built-in presets are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Start from the reduced-budget preset instead of the full one.
    #[arg(long, global = true)]
    pub desk_scale: bool,
    /// Dual training loss.
    #[arg(long, global = true, value_enum)]
    pub loss: Option<LossArg>,
    /// State dimension of the built-in problem.
    #[arg(long, global = true)]
    pub d: Option<usize>,
    /// Built-in problem name (`gbm3regime` or `expou_jump`).
    #[arg(long, global = true)]
    pub problem: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    D1,
    D2,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate state paths and write a raw dump.
    Simulate {
        #[arg(long, default_value_t = 1024)]
        paths: usize,
    },
    /// Train the DeepMartingale penalty.
    TrainDual,
    /// Train the softmax switching policy.
    TrainPrimal,
    /// Out-of-sample upper and lower bounds from saved checkpoints.
    Evaluate {
        #[arg(long)]
        dual: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Exact lattice certification of the duality relations.
    Certify {
        /// Lattice JSON files; random instances are generated when none are given.
        lattices: Vec<PathBuf>,
    },
    /// Hedging-error distribution of a saved penalty.
    Hedge {
        #[arg(long)]
        dual: Option<PathBuf>,
    },
    /// Dual and primal switching decisions on sampled states.
    Regions {
        #[arg(long)]
        dual: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Train both sides on the GBM instance and grade the bounds table row.
    Table1,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = context::Context::new(&cli.common, command_name(&cli.command)).and_then(|ctx| match cli.command {
        Command::Simulate { paths } => commands::simulate(&ctx, paths),
        Command::TrainDual => commands::train_dual(&ctx),
        Command::TrainPrimal => commands::train_primal(&ctx),
        Command::Evaluate { dual, policy } => commands::evaluate(&ctx, dual, policy),
        Command::Certify { lattices } => commands::certify(&ctx, &lattices),
        Command::Hedge { dual } => commands::hedge(&ctx, dual),
        Command::Regions { dual, policy } => commands::regions(&ctx, dual, policy),
        Command::Table1 => commands::table1(&ctx),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("checks failed; see report.json");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate { .. } => "simulate",
        Command::TrainDual => "train-dual",
        Command::TrainPrimal => "train-primal",
        Command::Evaluate { .. } => "evaluate",
        Command::Certify { .. } => "certify",
        Command::Hedge { .. } => "hedge",
        Command::Regions { .. } => "regions",
        Command::Table1 => "table1",
    }
}
