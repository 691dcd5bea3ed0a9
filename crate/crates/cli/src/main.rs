mod commands;
mod gradcheck;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::{CliError, Settings, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(
    name = "medseq",
    version,
    args_override_self = true,
    about = "Clinical medication entity tagger: BiLSTM-CRF with semantic tag features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed (default: $MEDSEQ_SEED, then 1).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic annotated corpus (.txt, .ann, .feat per document).
    Gen(GenArgs),
    /// Learn skip-gram word vectors from a directory of .txt files.
    Pretrain(PretrainArgs),
    /// Train a tagger and write its best checkpoint and epoch history.
    Train(Box<TrainArgs>),
    /// Tag every .txt in a directory and write .ann files.
    Predict(PredictArgs),
    /// Score predicted .ann files against gold, strict and lenient.
    Evaluate(EvaluateArgs),
    /// Run the CRF and gradient oracles and print their maximum errors.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of documents.
    #[arg(long)]
    docs: Option<usize>,
    /// Probability that a Reason/ADE mention carries its informative tags.
    #[arg(long)]
    tag_correlation: Option<f64>,
    /// Reason and ADE share one lexicon.
    #[arg(long)]
    shared_condition_lexicon: bool,
    #[arg(long, hide = true)]
    no_shared_condition_lexicon: bool,
    /// Pseudo-words added to the Drug, Reason and ADE lexicons.
    #[arg(long)]
    lexicon_expansion: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of .txt files.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output embeddings file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    subsample: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of .txt/.ann training documents.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Optional held-out directory scored after training.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Directory of .feat sidecars (required with --augment).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Pretrained word vectors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Uniformly initialized word vectors (the default).
    #[arg(long)]
    random_init: bool,
    /// Append CLAMP and cTAKES tag embeddings to each token.
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Epoch history JSON (default: `<checkpoint>.history.json`).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    clamp_dim: Option<usize>,
    #[arg(long)]
    ctakes_dim: Option<usize>,
    /// One shared tag table whose two rows are summed.
    #[arg(long)]
    merged_tags: bool,
    #[arg(long, hide = true)]
    no_merged_tags: bool,
    /// Fixed hidden size instead of 70% of the input size.
    #[arg(long)]
    hidden: Option<usize>,
    /// Penalize illegal IOB transitions.
    #[arg(long)]
    mask_transitions: bool,
    #[arg(long, hide = true)]
    no_mask_transitions: bool,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Rescale gradients whose global L2 norm exceeds this.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Worker threads per batch; results then depend on summation order.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of .txt files.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory for .ann files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of .feat sidecars for augmented models.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of gold .txt/.ann files.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Directory of predicted .ann files.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Maximum bipartite pairing instead of greedy first-overlap.
    #[arg(long)]
    bipartite: bool,
    #[arg(long, hide = true)]
    no_bipartite: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Random network instances.
    #[arg(long)]
    instances: Option<usize>,
    /// Central-difference step.
    #[arg(long)]
    epsilon: Option<f64>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let load = |c: &Common| Settings::load(c.config.as_deref());
    match &cli.command {
        Command::Gen(a) => commands::gen(a, &load(&a.common)?),
        Command::Pretrain(a) => commands::pretrain(a, &load(&a.common)?),
        Command::Train(a) => commands::train(a, &load(&a.common)?),
        Command::Predict(a) => commands::predict(a, &load(&a.common)?),
        Command::Evaluate(a) => commands::evaluate(a, &load(&a.common)?),
        Command::Gradcheck(a) => gradcheck::run(a, &load(&a.common)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
