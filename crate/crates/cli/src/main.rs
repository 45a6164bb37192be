use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use condgen::NllForm;

mod commands;
mod config;

use config::{EvalRun, OracleRun, RunConfig, SweepRun};

const EXIT_CODES: &str = "Exit codes: 0 success, 1 usage error, 2 runtime failure (non-finite loss, I/O).";

#[derive(Parser)]
#[command(name = "condgen", version, about = "Train and evaluate policy generators on the Synt-ND benchmark", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator; writes config.json, trajectory.csv and checkpoint.json.
    Train(TrainArgs),
    /// Sample a trained checkpoint; writes config.json, report.json, samples.csv (and confusion.json).
    Eval(EvalArgs),
    /// Enumerate every solution of the grid; writes config.json, solutions.csv and summary.json.
    Oracle(OracleArgs),
    /// One unconditional training run per dimension plus a convergence summary.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ProblemArgs {
    /// Number of variables T.
    #[arg(long)]
    dim: Option<usize>,
    /// Values per variable.
    #[arg(long)]
    cardinality: Option<usize>,
    /// Static constraint: f_test(x) < threshold.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    iterations: Option<usize>,
    /// Batch size N.
    #[arg(long)]
    batch: Option<usize>,
    /// Entropy weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Final weight of the region likelihood term.
    #[arg(long)]
    beta_max: Option<f64>,
    /// Iterations over which beta rises linearly from 0.
    #[arg(long)]
    beta_ramp: Option<usize>,
    /// log-mass or sum-log.
    #[arg(long)]
    nll_form: Option<NllForm>,
    /// Adam step size.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write checkpoint_<iteration>.json every K iterations (0 = off).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Condition on the octant label (one class per sign pattern).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    conditional: Option<bool>,
    #[command(flatten)]
    train: TrainFlags,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Start from a config.json; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    /// Condition every sample on this class label.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write confusion.json (conditional checkpoints only).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    confusion: Option<bool>,
    /// Samples per class for the confusion matrix.
    #[arg(long)]
    per_class: Option<usize>,
    /// Must match the checkpoint if given.
    #[arg(long)]
    dim: Option<usize>,
    /// Must match the checkpoint if given.
    #[arg(long)]
    cardinality: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated dimensions, e.g. 2,5,10.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    cardinality: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable document");
    s.push('\n');
    s
}

fn base<T>(path: &Option<PathBuf>, name: &str, pick: impl Fn(RunConfig) -> Option<T>) -> Result<Option<T>, CliError> {
    match path {
        Some(p) => Ok(pick(config::load(p, name)?)),
        None => Ok(None),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn apply_problem(p: &mut config::ProblemParams, a: ProblemArgs) {
    set(&mut p.dim, a.dim);
    set(&mut p.cardinality, a.cardinality);
    set(&mut p.threshold, a.threshold);
}

fn apply_train(t: &mut condgen::TrainConfig, f: TrainFlags) {
    set(&mut t.iterations, f.iterations);
    set(&mut t.batch_size, f.batch);
    set(&mut t.alpha, f.alpha);
    set(&mut t.beta_max, f.beta_max);
    set(&mut t.beta_ramp, f.beta_ramp);
    set(&mut t.nll_form, f.nll_form);
    set(&mut t.optimizer.learning_rate, f.lr);
    set(&mut t.seed, f.seed);
    set(&mut t.checkpoint_every, f.checkpoint_every);
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => {
            let mut r = base(&a.config, "train", |c| match c {
                RunConfig::Train(r) => Some(r),
                _ => None,
            })?
            .unwrap_or_default();
            apply_problem(&mut r.problem, a.problem);
            set(&mut r.conditional, a.conditional);
            apply_train(&mut r.train, a.train);
            commands::train(&r, &a.out)
        }
        Command::Eval(a) => {
            let mut r: EvalRun = base(&a.config, "eval", |c| match c {
                RunConfig::Eval(r) => Some(r),
                _ => None,
            })?
            .unwrap_or_default();
            set(&mut r.checkpoint, a.checkpoint);
            set(&mut r.samples, a.samples);
            if a.class.is_some() {
                r.class = a.class;
            }
            set(&mut r.seed, a.seed);
            set(&mut r.confusion, a.confusion);
            set(&mut r.per_class, a.per_class);
            set(&mut r.threshold, a.threshold);
            if r.checkpoint.as_os_str().is_empty() {
                return Err(CliError::Usage("--checkpoint is required".into()));
            }
            commands::eval(&r, a.dim, a.cardinality, &a.out)
        }
        Command::Oracle(a) => {
            let mut r: OracleRun = base(&a.config, "oracle", |c| match c {
                RunConfig::Oracle(r) => Some(r),
                _ => None,
            })?
            .unwrap_or_default();
            apply_problem(&mut r.problem, a.problem);
            commands::oracle(&r, &a.out)
        }
        Command::Sweep(a) => {
            let mut r: SweepRun = base(&a.config, "sweep", |c| match c {
                RunConfig::Sweep(r) => Some(r),
                _ => None,
            })?
            .unwrap_or_default();
            set(&mut r.dims, a.dims);
            set(&mut r.problem.cardinality, a.cardinality);
            set(&mut r.problem.threshold, a.threshold);
            apply_train(&mut r.train, a.train);
            commands::sweep(&r, &a.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
