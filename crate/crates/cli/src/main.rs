//! `gmine`: batch front end for segmenting, mining, cleaning and evaluating
//! embedded segment pools.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmine_core::postprocess::{DEFAULT_EVAL_SIZE, DEFAULT_TARGET_HOURS};
use gmine_core::segmenter::DurationBounds;
use gmine_core::{OverlapPolicy, ScanOptions, DEFAULT_THRESHOLD, EVAL_K, MINING_K};

#[derive(Debug, Parser)]
#[command(name = "gmine", version, about = "Exact margin-based global mining")]
pub struct Cli {
    /// Worker threads for the search kernels.
    #[arg(long, global = true, env = "MINER_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand VAD timelines into candidate segments (manifest TSV).
    Segment(SegmentArgs),
    /// Mine aligned pairs between two embedded pools.
    Mine(MineArgs),
    /// Remove overlapping alignments and excluded sessions.
    Postprocess(PostprocessArgs),
    /// Similarity-search error rate of paired pools.
    Evaluate(EvaluateArgs),
    /// Summary statistics and the language-pair hours matrix.
    Stats(StatsArgs),
    /// Highest threshold that keeps a target amount of source speech.
    SelectThreshold(SelectThresholdArgs),
    /// Select whole sessions by mean score for an evaluation set.
    Curate(CurateArgs),
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Query rows per score tile.
    #[arg(long, default_value_t = ScanOptions::default().block_rows)]
    block_rows: usize,
    /// Corpus rows per score tile.
    #[arg(long, default_value_t = ScanOptions::default().block_cols)]
    block_cols: usize,
}

impl ScanArgs {
    fn options(&self) -> ScanOptions {
        ScanOptions {
            block_rows: self.block_rows,
            block_cols: self.block_cols,
        }
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Timeline TSV: recording_id, start_ms, end_ms.
    #[arg(long)]
    timeline: PathBuf,
    /// ISO-639-1 language of the recordings.
    #[arg(long)]
    lang: String,
    #[arg(long, default_value_t = DurationBounds::DEFAULT_MIN_MS)]
    min_ms: u64,
    #[arg(long, default_value_t = DurationBounds::DEFAULT_MAX_MS)]
    max_ms: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    src_manifest: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    tgt_manifest: PathBuf,
    #[arg(long, default_value_t = MINING_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_negative_numbers = true)]
    threshold: f64,
    #[command(flatten)]
    scan: ScanArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignmentInput {
    /// Alignment TSV.
    #[arg(long)]
    alignments: PathBuf,
    #[arg(long)]
    src_manifest: PathBuf,
    #[arg(long)]
    tgt_manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[command(flatten)]
    input: AlignmentInput,
    /// Mutual overlap fraction above which the lower-scored alignment goes.
    #[arg(long, default_value_t = OverlapPolicy::DEFAULT_FRACTION)]
    overlap: f64,
    /// File with one recording id per line; alignments touching any of
    /// them on either side are dropped.
    #[arg(long)]
    exclude_sessions: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    src: PathBuf,
    /// References; row i is the expected match of source row i.
    #[arg(long)]
    refs: PathBuf,
    #[arg(long, default_value_t = EVAL_K)]
    k: usize,
    #[command(flatten)]
    scan: ScanArgs,
    /// Write the result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Alignment TSVs; each pairs with the manifests at the same position.
    #[arg(long = "alignments", required = true)]
    alignments: Vec<PathBuf>,
    #[arg(long = "src-manifest", required = true)]
    src_manifests: Vec<PathBuf>,
    #[arg(long = "tgt-manifest", required = true)]
    tgt_manifests: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Source hours per language pair.
    #[arg(long)]
    matrix_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectThresholdArgs {
    #[command(flatten)]
    input: AlignmentInput,
    #[arg(long, default_value_t = DEFAULT_TARGET_HOURS)]
    target_hours: f64,
    /// Comma-separated ascending thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = gmine_core::postprocess::DEFAULT_THRESHOLD_GRID)]
    grid: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[command(flatten)]
    input: AlignmentInput,
    #[arg(long, default_value_t = DEFAULT_EVAL_SIZE)]
    target_size: usize,
    /// Selected alignments.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error\t{}\t{}",
                e.kind(),
                e.message().replace(['\n', '\t'], " ")
            );
            ExitCode::from(e.exit_code())
        }
    }
}
