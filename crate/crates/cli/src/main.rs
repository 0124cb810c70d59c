//! `replykit`: the pipeline from raw transcripts to a served template pool.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use replykit_core::retrieval::Scorer;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "replykit",
    version,
    about = "Template-based response recommendation"
)]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic customer-service transcript corpus.
    Synth(SynthArgs),
    /// Mine question/answer pairs from transcripts into a labeled dataset.
    Ingest(IngestArgs),
    /// Train the dual encoder on a dataset.
    Train(TrainArgs),
    /// Cluster answer embeddings into a template pool.
    ExtractTemplates(ExtractArgs),
    /// Apply keep/drop/edit decisions to a template pool.
    Curate(CurateArgs),
    /// Run the 1-in-10 ranking evaluation for both scorers.
    RankEval(RankEvalArgs),
    /// Aggregate stored relevance annotations into a report.
    HumanEvalReport(HumanEvalArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Read questions from stdin, one per line, and print the top templates.
    Query(QueryArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub intents: usize,
    #[arg(long, default_value_t = 2000)]
    pub transcripts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Transcript JSON Lines; stdin when omitted or "-".
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Negatives per positive pair.
    #[arg(long, default_value_t = 2.0)]
    pub neg_ratio: f64,
    /// Fraction of transcripts held out for the dev split.
    #[arg(long, default_value_t = 0.1)]
    pub dev: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Both splits in one file, each line tagged with its split; stdout when
    /// no output flag is given.
    #[arg(long, short, conflicts_with_all = ["train_out", "dev_out"])]
    pub out: Option<PathBuf>,
    #[arg(long, requires = "dev_out")]
    pub train_out: Option<PathBuf>,
    #[arg(long, requires = "train_out")]
    pub dev_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size configuration (512-wide, lr 0.0002, batch 256).
    Full,
    /// 64-wide, lr 0.003, batch 32: trains on the synthetic corpus in about a minute.
    Desk,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset JSON Lines; stdin when omitted or "-". Lines tagged
    /// "dev" form the dev split.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Extra dev dataset file.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long, short, default_value = "model.denc")]
    pub out: PathBuf,
    /// Per-epoch metrics, JSON Lines [default: <out>.metrics.jsonl]
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Base values for flags not given.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// [full: 512]
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// [full: 512]
    #[arg(long)]
    pub lstm_dim: Option<usize>,
    /// Linear layers in the matching head [full: 3]
    #[arg(long)]
    pub mlp_layers: Option<usize>,
    /// [full: 512]
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// [full: 0.0002]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [full: 4]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [full: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [full: 5.0]
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Tokens kept from the end of each sentence [full: 60]
    #[arg(long)]
    pub max_len: Option<usize>,
    /// [full: 20000]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// One embedding table for both encoders.
    #[arg(long)]
    pub shared_embeddings: bool,
    /// Dev evaluations every N steps besides epoch ends.
    #[arg(long, default_value_t = 0)]
    pub dev_eval_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long, short)]
    pub checkpoint: PathBuf,
    /// Transcript JSON Lines to sample agent answers from.
    #[arg(long, required_unless_present = "answers", conflicts_with = "answers")]
    pub transcripts: Option<PathBuf>,
    /// Plain text, one answer per line.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    /// Answers sampled from the transcripts.
    #[arg(long, default_value_t = 400_000)]
    pub sample: usize,
    /// Cluster count (50 suits the synthetic corpus).
    #[arg(long, default_value_t = 500)]
    pub k: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short, default_value = "pool.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CurateArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Lines of `keep <id>`, `drop <id>` or `edit <id><TAB><text>`.
    #[arg(long)]
    pub decisions: PathBuf,
    /// Model the pool was built with; re-embeds edited templates.
    #[arg(long, short)]
    pub checkpoint: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RankEvalArgs {
    #[arg(long, short)]
    pub checkpoint: PathBuf,
    /// Dataset JSON Lines; positives tagged "dev" are used when present,
    /// otherwise all positives.
    #[arg(long, short)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub items: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = replykit_core::eval::BOOTSTRAP_RESAMPLES)]
    pub resamples: usize,
    /// Also aggregate this annotation store into the report.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, short, default_value = "report")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct HumanEvalArgs {
    #[arg(long, short)]
    pub annotations: PathBuf,
    #[arg(long, short, default_value = "report")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Blinded evaluation mode.
    #[arg(long)]
    pub eval_mode: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct QueryArgs {
    #[arg(long, short)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, short, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = Scorer::DualEncoder)]
    pub scorer: Scorer,
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Internal(e) => e,
        }
    }
}

/// Problems with inputs are the common case; `?` classifies them as data errors.
impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

pub trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn internal(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn internal(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Internal(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
