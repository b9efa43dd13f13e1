//! `robust-ope`: conversion, bounding, learning and evaluation from the shell.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(robust_ope::Error),
}

impl From<robust_ope::Error> for CliError {
    fn from(e: robust_ope::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "robust-ope", version, about = "Off-policy bounds under runtime uncertainty of the logging policy")]
struct Cli {
    /// Worker threads for data-parallel steps (default: all cores).
    #[arg(long, global = true, env = "ROBUST_OPE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a supervised CSV (ctx_*, label) into logged bandit feedback.
    Convert(ConvertArgs),
    /// Fit the lower/upper/point reward models and write their table.
    FitBounds(FitBoundsArgs),
    /// Robust bound of one estimator for a fixed policy.
    Bound(BoundArgs),
    /// Split, fit reward bounds and run minorize-maximize.
    Learn(LearnArgs),
    /// Oracle value, estimates, bounds, fluctuations and sampled perturbations.
    Evaluate(EvaluateArgs),
    /// Generalization slack of the learned lower bound.
    Slack(SlackArgs),
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FitBoundsArgs {
    /// Logged dataset the models are fitted on.
    #[arg(long)]
    pub data: PathBuf,
    /// Contexts the table is evaluated on (default: the fitting data).
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bounds CSV (i, a, lower, upper, point).
    #[arg(long)]
    pub output: PathBuf,
    /// Fitted models as JSON, reusable on other contexts.
    #[arg(long)]
    pub models_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RewardArgs {
    /// Bounds CSV matching the dataset rows.
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    /// Models JSON from `fit-bounds`, evaluated on the dataset contexts.
    #[arg(long, conflicts_with = "bounds")]
    pub models: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Policy JSON, or a CSV of probabilities with columns pi_0..pi_{k-1}.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// ips, tips, nips-greedy, nips-exact, rm or dr.
    #[arg(long, default_value = "ips")]
    pub estimator: String,
    /// lower or upper.
    #[arg(long, default_value = "lower")]
    pub direction: String,
    /// Propensity cutoff for tips.
    #[arg(long, default_value_t = 0.0)]
    pub q: f64,
    #[command(flatten)]
    pub reward: RewardArgs,
    /// Writes the bound certificate (ips, tips, dr).
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// Also writes the printed JSON here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `learn.alpha`.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Receives policy.json, trace.jsonl, plot.csv, models.json, summary.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub q: f64,
    #[command(flatten)]
    pub reward: RewardArgs,
    /// Perturbed logging policies to sample; 0 skips the block.
    #[arg(long, default_value_t = 20)]
    pub perturb_seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SlackArgs {
    #[arg(long)]
    pub q: f64,
    /// Explicit M_alpha; otherwise read from --bounds.
    #[arg(long)]
    pub m_alpha: Option<f64>,
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    #[arg(long)]
    pub r_bar: f64,
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub delta: f64,
    /// Explicit Rademacher complexity (default 0 unless estimated).
    #[arg(long)]
    pub rademacher: Option<f64>,
    /// Estimate the Rademacher term on these contexts with a sampled class.
    #[arg(long, conflicts_with = "rademacher")]
    pub rademacher_data: Option<PathBuf>,
    /// Hidden width of the sampled MLP class; 0 means softmax-linear.
    #[arg(long, default_value_t = 5)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub draws: usize,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Convert(a) => commands::convert(&a),
        Command::FitBounds(a) => commands::fit_bounds(&a),
        Command::Bound(a) => commands::bound(&a),
        Command::Learn(a) => commands::learn(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Slack(a) => commands::slack(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
