//! `otfuse`: train, align, fuse and compare multilayer perceptrons.
//!
//! Exit codes: 0 success, 1 usage or architecture error, 2 runtime or numerical
//! failure, 3 I/O or malformed input file. Failures print one line
//! `otfuse error [kind]: message` on stderr.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use otfuse_core::model::HiddenActivation;
use otfuse_core::ot::GroundMetric;
use otfuse_core::train::Quadrant;

use crate::error::{one_line, CliError};

#[derive(Debug, Parser)]
#[command(
    name = "otfuse",
    version,
    about = "Optimal-transport neuron alignment and fusion of MLPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a binary "digit in set vs rest" classifier on IDX data.
    TrainClassifier(TrainClassifierArgs),
    /// Train a gridworld reaching policy with REINFORCE.
    TrainGridworld(TrainGridworldArgs),
    /// Align the hidden neurons of model B to model A.
    Align(AlignArgs),
    /// Fuse two models with the same architecture.
    Fuse(FuseArgs),
    /// Report loss and accuracy of a classifier on IDX data.
    EvalClassifier(EvalClassifierArgs),
    /// Report the greedy reward of a policy on a gridworld task.
    EvalGridworld(EvalGridworldArgs),
    /// Run a fuse-then-retrain comparison described by a JSON spec.
    Experiment(ExperimentArgs),
    /// Compare backprop gradients against central finite differences.
    GradientCheck(GradientCheckArgs),
}

#[derive(Debug, Args)]
struct TrainClassifierArgs {
    /// IDX image file.
    #[arg(long)]
    images: PathBuf,
    /// IDX label file.
    #[arg(long)]
    labels: PathBuf,
    /// Digits relabelled as the positive class, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    positive_digits: Vec<usize>,
    /// Majority examples kept per minority example; 0 disables rebalancing.
    #[arg(long, default_value_t = 2.0)]
    rebalance_ratio: f64,
    /// Layer sizes, input first.
    #[arg(long, value_delimiter = ',', default_value = "784,32,2")]
    arch: Vec<usize>,
    #[arg(long, default_value_t = HiddenActivation::Tanh)]
    activation: HiddenActivation,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Fraction of the (rebalanced) data held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_split: f64,
    /// Use only the first N examples of the IDX files.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch training curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Target quadrants, comma separated (I, II, III, IV).
    #[arg(long, value_delimiter = ',', required = true)]
    quadrants: Vec<Quadrant>,
    /// Odd grid side length.
    #[arg(long, default_value_t = 9)]
    grid: usize,
    #[arg(long, default_value_t = 50)]
    max_steps: usize,
}

#[derive(Debug, Args)]
struct TrainGridworldArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Layer sizes; must start with 2 and end with 4.
    #[arg(long, value_delimiter = ',', default_value = "2,64,64,4")]
    arch: Vec<usize>,
    #[arg(long, default_value_t = HiddenActivation::Tanh)]
    activation: HiddenActivation,
    #[arg(long, default_value_t = 150)]
    iterations: usize,
    #[arg(long, default_value_t = 16)]
    episodes_per_iter: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Optional per-iteration reward curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverKind {
    Exact,
    Sinkhorn,
}

#[derive(Debug, Args)]
struct AlignmentArgs {
    #[arg(long, default_value_t = GroundMetric::Euclidean)]
    metric: GroundMetric,
    #[arg(long, value_enum, default_value_t = SolverKind::Exact)]
    solver: SolverKind,
    /// Entropic regularization for `--solver sinkhorn`.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Match on incoming weights only, without the bias.
    #[arg(long)]
    no_bias_cost: bool,
    /// Replace the source layers by barycentric projections instead of permutations.
    #[arg(long)]
    soft_alignment: bool,
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// Target model; its neuron order is kept.
    #[arg(long)]
    a: PathBuf,
    /// Source model to reorder.
    #[arg(long)]
    b: PathBuf,
    #[command(flatten)]
    alignment: AlignmentArgs,
    /// Output aligned source model.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-layer EMD CSV.
    #[arg(long)]
    emd_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FuseMethod {
    Ot,
    Naive,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value_t = FuseMethod::Ot)]
    method: FuseMethod,
    /// Weight on model A.
    #[arg(long, default_value_t = 0.5)]
    avg_weight: f64,
    #[command(flatten)]
    alignment: AlignmentArgs,
    #[arg(long)]
    out: PathBuf,
    /// Optional per-layer EMD CSV (`--method ot` only).
    #[arg(long)]
    emd_table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalClassifierArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Relabel these digits as positive before evaluating; raw labels otherwise.
    #[arg(long, value_delimiter = ',')]
    positive_digits: Option<Vec<usize>>,
    #[arg(long)]
    limit: Option<usize>,
    /// Optional CSV with the metrics.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalGridworldArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment spec JSON; relative data paths resolve against its directory.
    #[arg(long)]
    spec: PathBuf,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Seeds run in parallel; output does not depend on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct GradientCheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "3,4,2")]
    arch: Vec<usize>,
    #[arg(long, default_value_t = HiddenActivation::Tanh)]
    activation: HiddenActivation,
    /// Random examples in the checked batch.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::TrainClassifier(args) => commands::train_classifier(args),
        Command::TrainGridworld(args) => commands::train_gridworld(args),
        Command::Align(args) => commands::align(args),
        Command::Fuse(args) => commands::fuse(args),
        Command::EvalClassifier(args) => commands::eval_classifier(args),
        Command::EvalGridworld(args) => commands::eval_gridworld(args),
        Command::Experiment(args) => commands::experiment(args),
        Command::GradientCheck(args) => commands::gradient_check(args),
    }
}

/// The clap diagnostic without its usage and help hints.
fn clap_message(e: &clap::Error) -> String {
    let rendered = e.render().to_string();
    let kept: Vec<&str> = rendered
        .lines()
        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .collect();
    one_line(&kept.join("\n"))
        .trim_start_matches("error: ")
        .to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("otfuse error [usage]: {}", clap_message(&e));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
