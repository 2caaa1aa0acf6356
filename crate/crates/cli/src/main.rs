//! `rollout` command-line tool.
//!
//! Designs are written as CSV, everything else as JSON on stdout. On failure
//! the tool prints `{"error": {"kind": ..., "message": ...}}` to stderr and
//! exits nonzero (2 for usage errors, 1 otherwise).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rollout::harness::{DesignSpec, MethodSpec, ReportFormat};
use rollout::Method;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rollout::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rollout",
    version,
    about = "Staggered-rollout experiment design and estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a treatment design and write it as CSV.
    Design(DesignArgs),
    #[command(subcommand)]
    Objective(ObjectiveCommand),
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Estimate the treatment effect from a panel and a design.
    Estimate(EstimateArgs),
    #[command(subcommand)]
    Search(SearchCommand),
    #[command(subcommand)]
    Tune(TuneCommand),
    #[command(subcommand)]
    Select(SelectCommand),
    /// Run the block-sampling experiment and report RMSE per design and method.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignKind {
    Opt,
    OptCo,
    DOpt,
    Ff,
    Ba,
    Ffba,
    Reversible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Balance {
    Time,
    Unit,
    Twoway,
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignFormat {
    Matrix,
    Adoption,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    pub kind: DesignKind,
    #[arg(long = "N")]
    pub n_units: usize,
    #[arg(long = "T")]
    pub n_periods: usize,
    /// Carryover lags for opt-co and d-opt.
    #[arg(long, default_value_t = 1)]
    pub ell: usize,
    /// `unit,stratum` CSV; the path is rounded within each stratum.
    #[arg(long)]
    pub strata: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DesignFormat::Matrix)]
    pub format: DesignFormat,
    /// Zero-mean conditions for reversible designs.
    #[arg(long, value_enum, default_value_t = Balance::Twoway)]
    pub balance: Balance,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ObjectiveCommand {
    /// Objective value and KKT residual of a fraction path.
    Eval {
        /// `period,omega` CSV.
        #[arg(long)]
        path: PathBuf,
        #[arg(long, default_value_t = 0)]
        ell: usize,
    },
}

#[derive(Debug, Subcommand)]
enum OracleCommand {
    /// Exhaustive search over treated-count sequences.
    Enumerate(OracleArgs),
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long = "N")]
    pub n_units: usize,
    #[arg(long = "T")]
    pub n_periods: usize,
    #[arg(long, default_value_t = 0)]
    pub ell: usize,
    /// `unit,u1,...,uk` CSV of latent loadings.
    #[arg(long)]
    pub factor_loadings: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    /// Wide (`unit,<period>...`) or long (`unit,period,value`) CSV.
    #[arg(long)]
    pub panel: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, default_value = "ols")]
    pub method: Method,
    #[arg(long, default_value_t = 0)]
    pub ell: usize,
    #[arg(long, default_value_t = 1)]
    pub k0: usize,
    /// LRME singular-value threshold.
    #[arg(long)]
    pub mu: Option<f64>,
    /// `unit,x1,...` CSV of unit covariates (OLS and GLS only).
    #[arg(long)]
    pub covariates: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct EffectArgs {
    /// Direct effect size.
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    /// Comma-separated carryover effects, current period first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub taus: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct HistoryArgs {
    /// Historical control panel, wide or long CSV.
    #[arg(long)]
    pub hist: PathBuf,
    #[arg(long = "blockT")]
    pub block_periods: usize,
    /// Number of historical blocks.
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[command(flatten)]
    pub effect: EffectArgs,
    /// Checked against the number of carryover effects when given.
    #[arg(long)]
    pub ell: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MuGridArgs {
    #[arg(long, default_value_t = 20)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub mu_min: f64,
    #[arg(long, default_value_t = 1e2)]
    pub mu_max: f64,
}

#[derive(Debug, Subcommand)]
enum SearchCommand {
    /// Simulated annealing over unit row swaps.
    Sa(SaArgs),
    /// Cluster units on the leading singular vectors of the history.
    Kmeans {
        #[arg(long)]
        hist: PathBuf,
        #[arg(long = "K")]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct SaArgs {
    #[command(flatten)]
    pub history: HistoryArgs,
    #[arg(long, default_value = "gls")]
    pub method: Method,
    #[arg(long, default_value_t = 1)]
    pub k0: usize,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// Starting design; defaults to the rounded linear path.
    #[arg(long)]
    pub start: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum TuneCommand {
    /// Grid search for the LRME threshold.
    Mu(TuneArgs),
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub history: HistoryArgs,
    #[command(flatten)]
    pub grid: MuGridArgs,
    #[arg(long, default_value_t = 1)]
    pub k0: usize,
    /// Design used on every block; defaults to the rounded linear path.
    #[arg(long)]
    pub design: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SelectCommand {
    /// Pick OLS, GLS or LRME by minimax error on the history.
    Estimator(SelectArgs),
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub history: HistoryArgs,
    #[command(flatten)]
    pub grid: MuGridArgs,
    #[arg(long, default_value_t = 1)]
    pub k0: usize,
    /// Fixed LRME threshold instead of a grid search.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub design: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "data", required = true, multiple = false)]
pub struct SourceArgs {
    /// Panel to sample blocks from.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Synthetic source, e.g. `model=factor,k=1,sigma=0.5`.
    #[arg(long)]
    pub synthetic: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub data: SourceArgs,
    /// Units in a synthetic source panel; defaults to 2N.
    #[arg(long = "source-N")]
    pub source_units: Option<usize>,
    /// Periods in a synthetic source panel; defaults to 2(histT + T).
    #[arg(long = "source-T")]
    pub source_periods: Option<usize>,
    #[arg(long = "N")]
    pub n_units: usize,
    #[arg(long = "T")]
    pub n_periods: usize,
    #[arg(long = "histT", default_value_t = 0)]
    pub hist_periods: usize,
    #[arg(long)]
    pub m: usize,
    #[command(flatten)]
    pub effect: EffectArgs,
    #[arg(long, value_delimiter = ',', default_value = "opt")]
    pub designs: Vec<DesignSpec>,
    #[arg(long, value_delimiter = ',', default_value = "ols")]
    pub methods: Vec<MethodSpec>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub k0: usize,
    /// Fixed LRME threshold; grid-searched on the history otherwise.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Stride between historical tuning blocks.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Record failing blocks instead of aborting.
    #[arg(long)]
    pub skip_failed: bool,
    #[arg(long, default_value = "json")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Design(args) => commands::design(&args),
        Command::Objective(ObjectiveCommand::Eval { path, ell }) => {
            commands::objective_eval(&path, ell)
        }
        Command::Oracle(OracleCommand::Enumerate(args)) => commands::oracle(&args),
        Command::Estimate(args) => commands::estimate(&args),
        Command::Search(SearchCommand::Sa(args)) => commands::search_sa(&args),
        Command::Search(SearchCommand::Kmeans { hist, k, seed }) => {
            commands::search_kmeans(&hist, k, seed)
        }
        Command::Tune(TuneCommand::Mu(args)) => commands::tune_mu(&args),
        Command::Select(SelectCommand::Estimator(args)) => commands::select(&args),
        Command::Simulate(args) => commands::simulate(&args),
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let payload = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{payload}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if matches!(e, CliError::Usage(_)) {
                2
            } else {
                1
            };
            fail(e.kind(), &e.to_string(), code)
        }
    }
}
