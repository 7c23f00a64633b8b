use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod failure;
mod manifest;

use manifest::BackendMode;

/// Schema-guided LLM annotation of scientific abstracts, dataset tools and
/// scorers.
#[derive(Debug, Parser)]
#[command(name = "reanno", version)]
struct Cli {
    /// Schema file; the bundled SciERC inventory when omitted.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconstruct, split and tokenize a line-delimited abstract dump into a
    /// sentence store.
    Ingest(IngestArgs),
    /// Annotate sentences with the chat model and ground the results.
    Annotate(AnnotateArgs),
    /// Repeat an annotation run from its manifest using the replay store.
    Rerun(RerunArgs),
    /// Build the prompt for a set of sentences without sending it.
    Prompt(PromptArgs),
    /// Concatenate datasets, dropping exact duplicates.
    Merge(MergeArgs),
    /// Sentence, token, entity and relation counts.
    Stats(StatsArgs),
    /// NER, RE and RE_w/NEC micro-F1 of predictions against gold.
    Score(ScoreArgs),
    /// Positive specific agreement between two annotations.
    Iaa(IaaArgs),
    /// Convert between SciERC JSON and Brat standoff.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Line-delimited JSON dump, or `doc_id<TAB>sentence` lines with
    /// --presplit.
    input: PathBuf,
    /// Sentence store to write (one JSON sentence per line).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    presplit: bool,
    /// Keep only documents carrying one of these source tags.
    #[arg(long = "tag")]
    tags: Vec<String>,
    /// Extra abbreviations the splitter must not break after.
    #[arg(long = "abbreviation")]
    abbreviations: Vec<String>,
}

#[derive(Debug, Args)]
struct PromptOptions {
    /// Sentence store from `ingest`, or a pre-split `doc_id<TAB>text` file.
    sentences: PathBuf,
    /// Annotated sentences (SciERC JSON or Brat directory) to draw
    /// exemplars from.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    /// Number of exemplars.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Include type descriptions in the task definition.
    #[arg(long)]
    descriptions: bool,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 4096)]
    max_context_tokens: usize,
    /// Task-definition template with {entity_types} and {relation_types}.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Annotate a random sample of this many sentences.
    #[arg(long)]
    sample: Option<usize>,
    /// Seed for exemplar selection and sentence sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    #[command(flatten)]
    prompt: PromptOptions,
    #[arg(long, value_enum, default_value_t = BackendMode::Live)]
    backend: BackendMode,
    /// Replay store; defaults to `<out>/replay.jsonl`. Live runs append to it.
    #[arg(long)]
    replay_store: Option<PathBuf>,
    #[arg(long, default_value = reanno_core::llm_gateway::DEFAULT_ENDPOINT)]
    endpoint: String,
    #[arg(long, default_value = reanno_core::llm_gateway::DEFAULT_MODEL)]
    model: String,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Enable the fuzzy grounding tier.
    #[arg(long)]
    fuzzy: bool,
    /// Run directory for the dataset, reports and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Exit 0 even when some batches failed.
    #[arg(long)]
    allow_partial: bool,
}

#[derive(Debug, Args)]
struct RerunArgs {
    manifest: PathBuf,
    /// Run directory; defaults to the manifest's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    allow_partial: bool,
}

#[derive(Debug, Args)]
struct PromptArgs {
    #[command(flatten)]
    prompt: PromptOptions,
    /// Write the bundle as JSON instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MergeArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    dataset: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    gold: PathBuf,
    pred: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IaaArgs {
    a: PathBuf,
    b: PathBuf,
    /// Ignore entity types when matching.
    #[arg(long)]
    span_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Scierc,
    Brat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Tokenization {
    Whitespace,
    Rules,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    input: PathBuf,
    #[arg(long, value_enum)]
    to: Format,
    #[arg(long)]
    out: PathBuf,
    /// How Brat text is split into tokens when reading.
    #[arg(long, value_enum, default_value_t = Tokenization::Whitespace)]
    tokenization: Tokenization,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { failure::USAGE } else { failure::OK });
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure::exit_code(&e))
        }
    }
}
