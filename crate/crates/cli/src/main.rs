use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod fail;
mod report;

use config::RunConfig;
use fail::CliResult;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Joint radiograph classification pipeline: phantoms, preprocessing,
/// cross-validated ensembles and diagnostic statistics.
#[derive(Parser, Debug)]
#[command(name = "sacroscan", version)]
struct Cli {
    /// Flat `key = value` file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic radiograph dataset with manifest and template.
    Phantom(PhantomArgs),
    /// Preprocess every manifest image into an ROI patch.
    Prep(PrepArgs),
    /// Patient-level cross-validation of an ensemble.
    Cv(CvArgs),
    /// Evaluate a checkpoint on a manifest: metrics and curve files.
    Eval(EvalArgs),
    /// Paired Wilcoxon test, Cohen's kappa or 2x2 chi-square.
    Stats(StatsArgs),
    /// Summarize a finished cross-validation run.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    prevalence: Option<f64>,
    #[arg(long)]
    inflammation_delta: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    aux_coupling: Option<f64>,
    #[arg(long)]
    image_height: Option<usize>,
    #[arg(long)]
    image_width: Option<usize>,
    #[arg(long)]
    density_sigma: Option<f64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
pub struct PrepFlags {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Defaults to `template.pgm` beside the manifest.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    roi_side: Option<usize>,
    /// Keep raw intensities (no CLAHE, no min-max scaling).
    #[arg(long)]
    no_normalize: bool,
    /// Min-max scaling only.
    #[arg(long)]
    no_clahe: bool,
    #[arg(long)]
    clip_limit: Option<f64>,
    /// CLAHE tile grid, square.
    #[arg(long)]
    tiles: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    #[command(flatten)]
    prep: PrepFlags,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
pub struct ThresholdFlags {
    /// Decision threshold on the probability scale.
    #[arg(long)]
    threshold: Option<f64>,
    /// Decision threshold on the (-1, 1) score scale.
    #[arg(long)]
    threshold_score: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    prep: PrepFlags,
    #[command(flatten)]
    threshold: ThresholdFlags,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated members: dense, residual, plain.
    #[arg(long)]
    backbones: Option<String>,
    /// `desk` (small, CPU-friendly) or `full`.
    #[arg(long)]
    net_size: Option<String>,
    #[arg(long)]
    no_age: bool,
    #[arg(long)]
    no_sex: bool,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    augment_copies: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    prep: PrepFlags,
    #[command(flatten)]
    threshold: ThresholdFlags,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(subcommand)]
    test: StatsTest,
}

#[derive(Subcommand, Debug)]
pub enum StatsTest {
    /// Signed-rank test on paired values, one number per line in each file.
    Wilcoxon {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// two_sided, greater or less.
        #[arg(long, default_value = "two_sided")]
        alternative: String,
    },
    /// Agreement table, row-major and comma-separated (k*k cells).
    Kappa {
        #[arg(long)]
        table: String,
    },
    /// 2x2 table, row-major and comma-separated.
    Chi2 {
        #[arg(long)]
        table: String,
    },
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory written by `cv`.
    #[arg(long)]
    run: PathBuf,
}

pub struct Globals {
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let jobs = cfg.get("jobs", cli.jobs, 0usize)?;
    if jobs > 0 {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let g = Globals {
        seed: cfg.get("seed", cli.seed, 0u64)?,
        out: cfg.get_opt("out", cli.out.map(|p| p.display().to_string()))?.map(PathBuf::from),
    };
    match cli.command {
        Command::Phantom(a) => commands::phantom(&g, &mut cfg, a),
        Command::Prep(a) => commands::prep(&g, &mut cfg, a),
        Command::Cv(a) => commands::cv(&g, &mut cfg, a),
        Command::Eval(a) => commands::eval(&g, &mut cfg, a),
        Command::Stats(a) => commands::stats(a),
        Command::Report(a) => commands::report(&g, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
