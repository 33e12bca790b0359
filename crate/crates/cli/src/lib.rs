//! Command-line pipeline: scene synthesis, ingestion, patch assembly,
//! splitting, training, prediction, evaluation, neighborhood sweeps and SVG
//! rendering. Every stage writes a `run_manifest.json` with content hashes.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use popgrid::estimator::LogBase;
use popgrid::eval::RSquaredDefinition;
use popgrid::patch::EdgePolicy;

pub mod commands;
pub mod config;
pub mod manifest;
pub mod render;

pub use render::{HeatValue, ScatterKind};

/// Process exit code for bad flags, config or missing inputs.
pub const EXIT_USAGE: i32 = 2;
/// Process exit code for a stage that failed while running.
pub const EXIT_STAGE: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: anyhow::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Stage { .. } => EXIT_STAGE,
        }
    }
}

/// Wraps any error as a failure of `stage`.
pub fn stage<E: Into<anyhow::Error>>(stage: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Stage {
        stage,
        source: e.into(),
    }
}

fn parse_r2(s: &str) -> Result<RSquaredDefinition, String> {
    match s.replace('-', "_").as_str() {
        "squared_pearson" | "pearson" => Ok(RSquaredDefinition::SquaredPearson),
        "efficiency" => Ok(RSquaredDefinition::Efficiency),
        other => Err(format!("unknown R² definition {other:?}")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "popgrid", version, about = "Population grids from multispectral imagery")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Neighborhood sizes, comma separated (1,3,5,7,9,11).
    #[arg(long, global = true, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// zero_pad, clamp or skip.
    #[arg(long, global = true)]
    pub edge_policy: Option<EdgePolicy>,
    #[arg(long, global = true)]
    pub input_size: Option<usize>,
    /// 10 or e.
    #[arg(long, global = true)]
    pub loss_log_base: Option<LogBase>,
    /// Output directory (an .svg path for `render`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Population cell size in arc-seconds.
    #[arg(long, global = true)]
    pub cell_size: Option<f64>,
    /// squared_pearson or efficiency.
    #[arg(long, global = true, value_parser = parse_r2)]
    pub r_squared: Option<RSquaredDefinition>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Check co-registration and combine day/night grids into ambient counts.
    Ingest(IngestArgs),
    /// Write the neighborhood tensor of each cell as a BGRD file.
    Patchify(PatchifyArgs),
    /// Build the dataset manifest with train/valid/test splits.
    Split(SplitArgs),
    /// Train the convnet and fit the baselines.
    Train(TrainArgs),
    /// Predict every manifest cell with a checkpoint.
    Predict(PredictArgs),
    /// Metrics, bias fit and scatter tables for a prediction table.
    Evaluate(EvaluateArgs),
    /// Train, predict and evaluate for each neighborhood size.
    Sweep(SweepArgs),
    /// Render a scatterplot or heatmap as SVG.
    Render(RenderArgs),
}

#[derive(Debug, Default, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub pixels_per_cell: Option<usize>,
    #[arg(long)]
    pub correlation_length: Option<f64>,
    #[arg(long)]
    pub pop_scale: Option<f64>,
    #[arg(long)]
    pub confound_fraction: Option<f64>,
    #[arg(long)]
    pub confound_multiplier: Option<f64>,
    #[arg(long)]
    pub pixel_noise_sd: Option<f64>,
    #[arg(long)]
    pub day_night_jitter: Option<f64>,
}

#[derive(Debug, Default, Clone, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub imagery: Option<PathBuf>,
    #[arg(long)]
    pub day: Option<PathBuf>,
    #[arg(long)]
    pub night: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args)]
pub struct PatchifyArgs {
    #[arg(long)]
    pub imagery: Option<PathBuf>,
    /// Cells as `row,col`; repeat for several. Default: every cell.
    #[arg(long = "cell")]
    pub cells: Vec<String>,
}

#[derive(Debug, Default, Clone, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub ambient: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub imagery: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Disable dropout while training.
    #[arg(long)]
    pub no_dropout: bool,
}

#[derive(Debug, Default, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub imagery: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// train, valid, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Default, Clone, Args)]
pub struct SweepArgs {
    /// Directory written by `synth`; supplies imagery, day and night.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub imagery: Option<PathBuf>,
    #[arg(long)]
    pub day: Option<PathBuf>,
    #[arg(long)]
    pub night: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum RenderKind {
    PredVsTruth,
    ResidualVsTruth,
    Heatmap,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Scatter CSV, prediction table or ESRI ASCII grid.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: RenderKind,
    /// Heatmap value: truth_lg, pred_lg or residual.
    #[arg(long, value_enum, default_value = "truth_lg")]
    pub value: HeatValue,
    /// Restrict a prediction table to one split (train, valid, test).
    #[arg(long)]
    pub split: Option<String>,
}

/// Caps the global rayon pool at `POPGRID_THREADS` workers when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("POPGRID_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("POPGRID_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("POPGRID_THREADS: {e}")))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    commands::dispatch(cli)
}
