//! `emtransfer` command-line driver.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "emtransfer",
    version,
    about = "Active transfer learning for EM membrane segmentation"
)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic domains from a JSON spec.
    SynthGen(SynthGenArgs),
    /// Train one source model per domain.
    Pretrain(PretrainArgs),
    /// Cache bottleneck embeddings of a domain split.
    Embed(EmbedArgs),
    /// Domain-by-domain squared MMD matrix.
    MmdMatrix(MmdMatrixArgs),
    /// Print the source with minimum (or maximum) MMD to a target.
    Ods(OdsArgs),
    /// Rank a domain's images by MC-dropout uncertainty.
    AuditUncertainty(AuditArgs),
    /// Budgeted adaptation runs for one target and mode.
    Adapt(AdaptArgs),
    /// Watershed + VI evaluation of a checkpoint on a labeled split.
    Evaluate(EvaluateArgs),
    /// Full experiment grid from a JSON config.
    Grid(GridArgs),
    /// UPGMA clustering of a distance matrix, optionally tested against a reference grouping.
    Cluster(ClusterArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// JSON with either `benchmark` or `domains` plus `samples_per_domain`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated domain names (default: every domain under --data).
    #[arg(long, value_delimiter = ',')]
    pub domains: Vec<String>,
    /// Output directory; checkpoints are written as `<out>/<domain>`.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON with optional `model`, `train` and `eval` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub domain: String,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Checkpoint prefix.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MmdMatrixArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of `<domain>` checkpoints.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub domains: Vec<String>,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = emtransfer::mmd::DEFAULT_SAMPLE_CAP)]
    pub sample_cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `median` or a fixed positive bandwidth.
    #[arg(long, default_value = "median")]
    pub bandwidth: String,
    /// `biased` or `unbiased`.
    #[arg(long, default_value = "biased")]
    pub estimator: String,
}

#[derive(Debug, Args)]
pub struct OdsArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Default: every other domain in the matrix.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<String>,
    /// Pick the maximum-distance source instead.
    #[arg(long)]
    pub farthest: bool,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub domain: String,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k_passes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write entropy heatmaps of the N most uncertain images.
    #[arg(long, default_value_t = 0)]
    pub heatmaps: usize,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub sampler: Option<String>,
    /// Annotation budget.
    #[arg(short = 'A')]
    pub annotations: Option<usize>,
    /// Training budget in gradient steps.
    #[arg(short = 'B')]
    pub steps: Option<usize>,
    /// Requested active iterations.
    #[arg(short = 'T')]
    pub iterations: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Precomputed distance matrix; otherwise distances are computed on the
    /// target's unlabeled pool.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Base adaptation settings as JSON; flags override.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub domain: String,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub min_seed_area: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir` of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// CSV with `domain,family` rows.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// `exact` or a Monte Carlo permutation count.
    #[arg(long, default_value = "exact")]
    pub permutations: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("InvalidConfig", "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime("ThreadPool", e.to_string()))?;
    }
    match cli.command {
        Command::SynthGen(a) => commands::synth_gen(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::MmdMatrix(a) => commands::mmd_matrix(&a),
        Command::Ods(a) => commands::ods(&a),
        Command::AuditUncertainty(a) => commands::audit_uncertainty(&a),
        Command::Adapt(a) => commands::adapt(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Grid(a) => commands::grid(&a),
        Command::Cluster(a) => commands::cluster(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e.render());
            let first = e
                .to_string()
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ")
                .to_string();
            eprintln!("{}", CliError::Usage(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
