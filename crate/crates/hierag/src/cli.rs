use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "hierag",
    version,
    about = "Question answering over code repositories with bottom-up distilled knowledge"
)]
pub struct Cli {
    /// Flat `key = value` config file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Log resolved settings (-v) or debug detail (-vv) to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a repository and build the baseline and/or implicit index.
    Index(IndexArgs),
    /// Answer one question from an index.
    Query(QueryArgs),
    /// Answer a QA dataset with each index and write score reports.
    Eval(EvalArgs),
    /// Render the tables of a saved JSON report.
    Report(ReportArgs),
}

macro_rules! choice {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "`{other}` is not one of: {}",
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($name::$variant => $text),+
                })
            }
        }
    };
}

choice!(MethodChoice { Baseline => "baseline", Implicit => "implicit", Both => "both" });
choice!(LlmKind { Scripted => "scripted", Openai => "openai" });
choice!(EmbedKind { Hash => "hash", Openai => "openai" });

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// Text generator: `scripted` (offline, deterministic) or `openai`.
    #[arg(long, value_name = "KIND")]
    pub llm_backend: Option<LlmKind>,
    /// Embedder: `hash` (offline, deterministic) or `openai`.
    #[arg(long, value_name = "KIND")]
    pub embed_backend: Option<EmbedKind>,
    /// Rule table for the scripted backend.
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible API, e.g. https://host/v1.
    #[arg(long, value_name = "URL")]
    pub endpoint_url: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub model_name: Option<String>,
    /// Embeddings base URL; defaults to --endpoint-url.
    #[arg(long, value_name = "URL")]
    pub embed_endpoint_url: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub embed_model_name: Option<String>,
    #[arg(long, value_name = "N")]
    pub embed_dim: Option<usize>,
    #[arg(long, value_name = "N")]
    pub max_retries: Option<u32>,
    #[arg(long, value_name = "N")]
    pub max_inflight: Option<usize>,
    /// Prompt budget in whitespace tokens.
    #[arg(long, value_name = "N")]
    pub context_budget_tokens: Option<usize>,
    #[arg(long, value_name = "N")]
    pub max_output_tokens: Option<u32>,
    #[arg(long, value_name = "T")]
    pub temperature: Option<f32>,
    #[arg(long, value_name = "SECS")]
    pub timeout_secs: Option<u64>,
    #[arg(long, value_name = "N")]
    pub hash_dim: Option<usize>,
    #[arg(long, value_name = "SEED")]
    pub hash_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Repository root to scan.
    pub repo: PathBuf,
    /// `baseline`, `implicit` or `both`.
    #[arg(long, value_name = "METHOD")]
    pub method: Option<MethodChoice>,
    /// Baseline chunk size in tokens.
    #[arg(long, value_name = "N")]
    pub chunk_size: Option<usize>,
    #[arg(long, value_name = "N")]
    pub chunk_overlap: Option<usize>,
    /// Replacement leaf prompt template (must contain `{context}` once).
    #[arg(long, value_name = "FILE")]
    pub leaf_template: Option<PathBuf>,
    /// Replacement folder prompt template (must contain `{context}` once).
    #[arg(long, value_name = "FILE")]
    pub parent_template: Option<PathBuf>,
    /// Concurrent generation jobs per tree level.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Extra glob to skip; repeatable.
    #[arg(long, value_name = "GLOB")]
    pub ignore: Vec<String>,
    /// Output directory; must lie outside the repository.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub question: String,
    /// Index directory (holding index.jsonl).
    #[arg(long, value_name = "DIR")]
    pub index: PathBuf,
    /// Number of documents to retrieve.
    #[arg(long, value_name = "N")]
    pub k: Option<usize>,
    /// Also print retrieved doc ids and scores.
    #[arg(long)]
    pub show_sources: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON array of {id, question, ground_truth, level}.
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub index_baseline: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub index_implicit: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub k: Option<usize>,
    /// Make the scripted backend answer each question with its ground truth.
    #[arg(long)]
    pub echo_ground_truth: bool,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Saved report JSON (per-question rows and/or aggregate rows).
    #[arg(long, value_name = "FILE")]
    pub from: PathBuf,
    /// Also write report.txt here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
