use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "coner",
    version,
    about = "Online emotion recognition for dyadic conversations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus and its manifest
    Synth(SynthArgs),
    /// Count label transitions of a corpus into a DK table
    DkExtract(DkArgs),
    /// Train the Q-network and write a checkpoint
    Train(TrainArgs),
    /// Predict emotions, from a corpus file or streamed JSONL on stdin
    Predict(PredictArgs),
    /// Score predictions against gold labels
    Eval(EvalArgs),
    /// Train and evaluate once per window size (and seed)
    Sweep(SweepArgs),
}

/// Options shared by every subcommand. Precedence, lowest first: preset,
/// config file, `--set`, dedicated flags.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML config file
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Base preset: desk or paper
    #[arg(long)]
    pub preset: Option<String>,
    /// Root seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Emotion-pair window size (2..=5)
    #[arg(long)]
    pub window: Option<usize>,
    /// Override any config key, e.g. --set trainer.lr=0.001 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RevisionArg {
    Full,
    CorrOnly,
    Off,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus JSONL file
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Manifest with the expected feature dims (inferred from the first record if omitted)
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output corpus JSONL
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Output manifest (default: <out stem>.manifest.json)
    #[arg(long, value_name = "FILE")]
    pub manifest_out: Option<PathBuf>,
    #[arg(long)]
    pub conversations: Option<usize>,
    #[arg(long)]
    pub min_length: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
    /// Probability of the favoured class in each transition row
    #[arg(long)]
    pub max_entry: Option<f64>,
    /// Class-mean separation in noise-sigma units
    #[arg(long)]
    pub separation: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DkArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: CorpusArgs,
    /// Output DK file
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Which split to count (default: train, plus valid when data.dk_include_valid is set)
    #[arg(long, value_enum)]
    pub subset: Option<Subset>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: CorpusArgs,
    /// Output checkpoint (tensor blob written to <checkpoint>.bin)
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Training log CSV
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "train")]
    pub subset: Subset,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Reward magnitude r
    #[arg(long)]
    pub reward: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub sync_period: Option<u64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub train_every: Option<u64>,
    /// Supervised epochs before RL; freezes the encoder and graph afterwards
    #[arg(long)]
    pub staged_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub dk: Option<PathBuf>,
    /// Read utterance JSONL from stdin and write one prediction per line
    #[arg(long)]
    pub stream: bool,
    /// Corpus to predict when not streaming
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Output JSONL (default stdout)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub revision: Option<RevisionArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: CorpusArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub dk: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
    /// JSON report with the full metrics
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Confusion matrix CSV
    #[arg(long, value_name = "FILE")]
    pub confusion: Option<PathBuf>,
    /// Print a text heatmap of the confusion matrix
    #[arg(long)]
    pub heatmap: bool,
    #[arg(long, value_enum)]
    pub revision: Option<RevisionArg>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: CorpusArgs,
    /// Output CSV; standard deviations go to <out stem>.std.csv
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Window sizes, comma separated
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    /// Extra seeds, comma separated
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Worker threads (default: CONER_THREADS, else available cores)
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, value_enum)]
    pub revision: Option<RevisionArg>,
}
