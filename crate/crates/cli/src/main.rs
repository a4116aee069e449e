//! `crl`: batch front end for fitting, tuning, clustering, simulation,
//! benchmarks and segmentation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crl::error::CrlError;

#[derive(Parser, Debug)]
#[command(name = "crl", version, about = "Clustered reduced-rank learning")]
struct Cli {
    /// Worker threads for replicate and grid fan-out (CRL_JOBS overrides).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Per-iteration objective trace on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model with fixed q and r.
    Fit(FitArgs),
    /// Grid search over (q, r) scored by a predictive information criterion.
    Tune(TuneArgs),
    /// Cluster data rows directly or through a graph kernel.
    Cluster(ClusterArgs),
    /// Generate a synthetic dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Replicated benchmark suites; one CSV row per replicate.
    Bench(BenchArgs),
    /// Trace-regression segmentation of samples into linear sub-models.
    Segment(SegmentArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Loss {
    Quadratic,
    Logistic,
    Poisson,
}

impl From<Loss> for crl::losses::LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Quadratic => Self::Quadratic,
            Loss::Logistic => Self::Logistic,
            Loss::Poisson => Self::Poisson,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Design matrix CSV (n × p).
    #[arg(long)]
    x: PathBuf,
    /// Response matrix CSV (n × m).
    #[arg(long)]
    y: PathBuf,
    #[arg(long, value_enum, default_value_t = Loss::Quadratic)]
    loss: Loss,
    /// Rank-wise equisparsity (q levels per column of S).
    #[arg(long)]
    rankwise: bool,
    /// Fit an unpenalized intercept.
    #[arg(long)]
    intercept: bool,
    /// Response weighting matrix Γ (m × m CSV); quadratic loss only.
    #[arg(long)]
    weighted: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    q: usize,
    #[arg(long)]
    r: usize,
    /// Warm start from a saved model.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Model JSON destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Pic {
    /// Plug-in PIC with an estimated or given σ².
    Plugin,
    /// Scale-free fractional PIC.
    Sf,
    /// Log-form PIC.
    Log,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Cluster counts, as `a:b` (inclusive) or a comma list.
    #[arg(long)]
    q_grid: String,
    /// Ranks, as `a:b` (inclusive) or a comma list.
    #[arg(long)]
    r_grid: String,
    #[arg(long, value_enum, default_value_t = Pic::Sf)]
    pic: Pic,
    /// Known noise variance for the plug-in criterion.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Writes PREFIX.json and PREFIX.csv; JSON to stdout when absent.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum GraphKindArg {
    Gaussian,
    Mknn,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["data", "edges"])))]
struct ClusterArgs {
    /// Data rows to cluster (CSV).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Edge list `i j [weight]` defining the graph.
    #[arg(long, conflicts_with = "graph")]
    edges: Option<PathBuf>,
    /// Vertex count for --edges (defaults to the largest index).
    #[arg(long, requires = "edges")]
    n: Option<usize>,
    /// Edge list vertices start at 0 instead of 1.
    #[arg(long, requires = "edges")]
    zero_based: bool,
    /// Build a similarity graph from --data and cluster through its kernel.
    #[arg(long, value_enum, requires = "data")]
    graph: Option<GraphKindArg>,
    /// Gaussian bandwidth (default: median pairwise distance).
    #[arg(long, conflicts_with = "k")]
    bandwidth: Option<f64>,
    /// Neighbors for the mutual k-NN graph.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    q: usize,
    /// Clustering rank (default q).
    #[arg(long)]
    r: Option<usize>,
    /// Kernel response width (default 2q).
    #[arg(long)]
    mbar: Option<usize>,
    /// Use the whitened eigenvector block instead of U·D^{1/2}.
    #[arg(long)]
    whiten: bool,
    /// Unnormalized Laplacian D − W.
    #[arg(long)]
    unnormalized: bool,
    /// Reference labels; CA, NMI and Rand index go to stderr as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Labels CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum ScenarioArg {
    Setting1,
    Setting2,
    Regression,
    Planted,
    Moons,
    Rings,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    sigma_b: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    per_cluster: Option<usize>,
    #[arg(long)]
    z_in: Option<f64>,
    #[arg(long)]
    z_out: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Output files are PREFIX_<part>.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Suite {
    /// Centroid clustering, settings 1 and 2.
    B2,
    /// Misspecified multivariate regression.
    B4,
    /// Planted-partition community detection.
    Gn,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 20)]
    reps: u64,
    /// Per-replicate metrics CSV; stdout when absent. Medians go to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// Sample covariates (n × p CSV).
    #[arg(long)]
    x: PathBuf,
    /// Scalar responses (n × 1 CSV).
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    q_grid: String,
    /// Writes PREFIX_labels.csv, PREFIX_coef.csv and PREFIX_report.json;
    /// labels to stdout when absent.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

/// Process failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, kind: "usage", message: message.into() }
    }
}

impl From<CrlError> for Failure {
    fn from(e: CrlError) -> Self {
        let (code, kind) = match e {
            CrlError::Config(_) | CrlError::UnsupportedVariant(_) => (2, "usage"),
            CrlError::Nonconvergence(_) => (4, "nonconvergence"),
            CrlError::Io(_) => (3, "io"),
            CrlError::Parse(_) | CrlError::Structural(_) | CrlError::Domain(_) | CrlError::AllEliminated => (3, "data"),
        };
        Failure { code, kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 3, kind: "io", message: e.to_string() }
    }
}

fn report(f: &Failure) -> ExitCode {
    let body = serde_json::json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
    eprintln!("{body}");
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&Failure::usage(e.render().to_string().trim_end())),
    };
    let jobs = match std::env::var("CRL_JOBS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(j) if j > 0 => Some(j),
            _ => return report(&Failure::usage(format!("CRL_JOBS must be a positive integer, got `{v}`"))),
        },
        Err(_) => cli.jobs,
    };
    if jobs == Some(0) {
        return report(&Failure::usage("--jobs must be positive"));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return report(&Failure::usage(format!("cannot start worker pool: {e}"))),
    };
    let ctx = commands::Context { seed: cli.seed, verbose: cli.verbose };
    let outcome = pool.install(|| match cli.command {
        Command::Fit(a) => commands::fit(&ctx, a),
        Command::Tune(a) => commands::tune(&ctx, a),
        Command::Cluster(a) => commands::cluster(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Bench(a) => commands::bench(&ctx, a),
        Command::Segment(a) => commands::segment(&ctx, a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}
