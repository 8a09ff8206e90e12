//! `bnb` — nightly-price prediction and availability likelihood for
//! short-stay listing snapshots.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bnb_core::balance::DownsampleOrder;
use bnb_core::pipelines::FoldMode;

use config::{FileConfig, FlagOverrides};

#[derive(Parser)]
#[command(
    name = "bnb",
    version,
    about = "Price and availability models for short-stay listing snapshots",
    after_help = "Exit codes: 0 success, 2 usage, 3 i/o, 4 schema, 5 numeric/degenerate data."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for every random choice [default: 42]
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Listings snapshot CSV
    #[arg(long, global = true, value_name = "PATH")]
    listings: Option<PathBuf>,

    /// Calendar snapshot CSV
    #[arg(long, global = true, value_name = "PATH")]
    calendar: Option<PathBuf>,

    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Rows each listing is balanced to [default: 100]
    #[arg(long, global = true, value_name = "INT")]
    target_per_listing: Option<usize>,

    /// Easy/hard gate threshold in USD [default: 30]
    #[arg(long, global = true, value_name = "USD")]
    gate_threshold: Option<f64>,

    /// Randomized-search iterations [default: 100]
    #[arg(long, global = true, value_name = "INT")]
    n_iter: Option<usize>,

    /// Cross-validation folds [default: 10]
    #[arg(long, global = true, value_name = "INT")]
    folds: Option<usize>,

    /// Fold assignment [default: row]
    #[arg(long, global = true, value_enum, value_name = "MODE")]
    fold_mode: Option<FoldModeArg>,

    /// Availability window in days: 30, 60, 90 or 365 [default: 365]
    #[arg(long, global = true, value_name = "DAYS")]
    window: Option<u32>,

    /// Which rows survive downsampling [default: farthest]
    #[arg(long, global = true, value_enum, value_name = "ORDER")]
    downsample_order: Option<OrderArg>,

    /// Train the final forest on easy-gated listings only [default: off]
    #[arg(long, global = true)]
    easy_only: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FoldModeArg {
    Row,
    Group,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Farthest,
    Nearest,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and clean snapshot CSVs; write the cleaned CSV and a drop report
    Ingest,
    /// Exploratory artifacts: histograms, weekday/weekend medians, correlations, heatmap
    Eda,
    /// Linear baseline with out-of-fold USD error distribution and buckets
    Baseline,
    /// Easy/hard labels, the gate classifier and per-feature easy/hard histograms
    Gate,
    /// Balance every listing to the target row count; write the balanced dataset
    Balance,
    /// Randomized hyperparameter search; prints the ranked top-3 block
    Tune,
    /// Full price pipeline; writes the model artifact and the run report
    Train,
    /// Score listings with a trained model: price + gate verdict per row
    Predict {
        /// Trained price model artifact (from `train`)
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Listings-format CSV of rows to score (price column may be empty)
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Availability pipeline: per-window clustering + Naive Bayes likelihoods
    Availability,
    /// Held-out error as the forest's tree count grows
    TreesCurve {
        /// Comma-separated tree counts [default: 1,2,5,10,20,50,100,200]
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        trees: Option<Vec<usize>>,
    },
}

fn run(cli: Cli) -> bnb_core::Result<()> {
    let file = match &cli.common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let trees = match &cli.command {
        Command::TreesCurve { trees } => trees.clone(),
        _ => None,
    };
    let flags = FlagOverrides {
        listings: cli.common.listings.clone(),
        calendar: cli.common.calendar.clone(),
        out: cli.common.out.clone(),
        seed: cli.common.seed,
        target_per_listing: cli.common.target_per_listing,
        downsample_order: cli.common.downsample_order.map(|o| match o {
            OrderArg::Farthest => DownsampleOrder::FarthestFromMedian,
            OrderArg::Nearest => DownsampleOrder::NearestToMedian,
        }),
        gate_threshold_usd: cli.common.gate_threshold,
        n_iter: cli.common.n_iter,
        folds: cli.common.folds,
        fold_mode: cli.common.fold_mode.map(|m| match m {
            FoldModeArg::Row => FoldMode::Row,
            FoldModeArg::Group => FoldMode::Group,
        }),
        window: cli.common.window,
        train_easy_only: cli.common.easy_only,
        trees,
    };
    let config = config::resolve(file, flags)?;

    match &cli.command {
        Command::Ingest => commands::cmd_ingest(&config),
        Command::Eda => commands::cmd_eda(&config),
        Command::Baseline => commands::cmd_baseline(&config),
        Command::Gate => commands::cmd_gate(&config),
        Command::Balance => commands::cmd_balance(&config),
        Command::Tune => commands::cmd_tune(&config),
        Command::Train => commands::cmd_train(&config),
        Command::Predict { model, input } => commands::cmd_predict(&config, model, input),
        Command::Availability => commands::cmd_availability(&config),
        Command::TreesCurve { .. } => commands::cmd_trees_curve(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // usage errors exit 2 via clap
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code())
        }
    }
}
