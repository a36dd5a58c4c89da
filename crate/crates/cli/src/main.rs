mod backend;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conceptprobe::corpus::ConceptFormat;
use conceptprobe::harness::HarnessError;
use conceptprobe::lmclient::LmError;
use conceptprobe::probe::ProbeError;
use conceptprobe::promptgen::Condition;
use conceptprobe::protoqa::{MatchMode, ProtoQAError};
use conceptprobe::represent::ReprError;

use backend::BackendArgs;

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "conceptprobe", version, about = "Reverse-dictionary probing of causal language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a concept list to canonical JSONL.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: FormatArg,
        #[arg(long)]
        output: PathBuf,
    },
    /// Reverse-dictionary probe runs and reports.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Summary representations and their analyses.
    #[command(subcommand)]
    Repr(ReprCommand),
    /// Reasoning and syntax benchmarks scored by log-probability.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// ProtoQA answer generation and scoring.
    #[command(subcommand)]
    Protoqa(ProtoqaCommand),
    /// Correlate per-model probe accuracy with task scores or model size.
    Correlate {
        /// CSV `model,score`.
        #[arg(long)]
        probe: PathBuf,
        /// CSV `model,task,score`.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// CSV `model,parameters`.
        #[arg(long)]
        sizes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Model server utilities.
    #[command(subcommand)]
    Backend(BackendCommand),
    /// Execute every experiment of a JSON run config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    ThingsTsv,
    Hill200Tsv,
}

impl From<FormatArg> for ConceptFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => ConceptFormat::Jsonl,
            FormatArg::ThingsTsv => ConceptFormat::ThingsTsv,
            FormatArg::Hill200Tsv => ConceptFormat::Hill200Tsv,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConceptArgs {
    /// Concept list.
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: FormatArg,
}

#[derive(Debug, Subcommand)]
enum ProbeCommand {
    /// Run the reverse-dictionary probe and write trial records.
    Run {
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        concepts: ConceptArgs,
        /// Demonstration pool (defaults to the query list).
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
        #[arg(long, default_value_t = 24)]
        n_demos: usize,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        permute_ratio: f64,
        #[arg(long, default_value_t = 4)]
        in_flight: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate trial records into an accuracy table.
    Report {
        #[arg(long = "records", required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormatArg,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Correlate per-concept accuracy with frequency, sense count and
    /// description length.
    Factors {
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        concepts: ConceptArgs,
        /// Word frequency table.
        #[arg(long)]
        freq: PathBuf,
        /// WordNet database directory.
        #[arg(long)]
        wordnet: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormatArg {
    Csv,
    Markdown,
}

#[derive(Debug, Subcommand)]
enum ReprCommand {
    /// Collect final-position hidden states (writes BASE.f32 and BASE.json).
    Extract {
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        concepts: ConceptArgs,
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
        #[arg(long, default_value_t = 24)]
        n_demos: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-out nearest-centroid categorization.
    Categorize {
        /// Dataset base path (without extension).
        #[arg(long)]
        reprs: PathBuf,
        #[command(flatten)]
        concepts: ConceptArgs,
        /// CSV `concept,category`; the concepts' own categories otherwise.
        #[arg(long)]
        memberships: Option<PathBuf>,
        /// CSV `child,parent`.
        #[arg(long)]
        subcategories: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated logistic decoding of feature norms.
    Decode {
        #[arg(long)]
        reprs: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_concepts: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        l2: f64,
        /// Also decode label-shuffled copies (written next to OUT).
        #[arg(long)]
        shuffled: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Principal-component coordinates.
    Project {
        #[arg(long)]
        reprs: PathBuf,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Multiple-choice scoring by summed continuation log-probability.
    Mc {
        #[command(flatten)]
        backend: BackendArgs,
        /// JSONL items.
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grammatical minimal pairs.
    Pairs {
        #[command(flatten)]
        backend: BackendArgs,
        /// JSONL `{good, bad}` pairs.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum ProtoqaCommand {
    /// Sample, rank and score answers for every question.
    Run {
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        wordnet: Option<PathBuf>,
        /// Concept list (JSONL) for reverse-dictionary demonstrations.
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        n_demos: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [MatchModeArg::Exact, MatchModeArg::Wordnet])]
        modes: Vec<MatchModeArg>,
        /// Per-question JSONL; the aggregate CSV goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-score ranked answers from an earlier run.
    Score {
        /// JSONL written by `protoqa run`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        wordnet: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [MatchModeArg::Exact, MatchModeArg::Wordnet])]
        modes: Vec<MatchModeArg>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchModeArg {
    Exact,
    Wordnet,
}

impl std::fmt::Display for MatchModeArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(MatchMode::from(*self).as_str())
    }
}

impl From<MatchModeArg> for MatchMode {
    fn from(m: MatchModeArg) -> Self {
        match m {
            MatchModeArg::Exact => MatchMode::Exact,
            MatchModeArg::Wordnet => MatchMode::WordNet,
        }
    }
}

#[derive(Debug, Subcommand)]
enum BackendCommand {
    /// Check a model server against the wire protocol.
    Verify {
        #[arg(long)]
        url: String,
        #[arg(long, default_value = "a small very thin pancake ⇒")]
        prompt: String,
        #[arg(long, default_value_t = 300)]
        timeout_secs: u64,
    },
    /// Serve an oracle backend over HTTP.
    Serve {
        #[arg(long)]
        oracle_spec: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse()
}

/// Exit status for an error: 3 when the model backend failed, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return if h.is_backend() { EXIT_BACKEND } else { EXIT_CONFIG };
        }
        let backend = cause.downcast_ref::<LmError>().is_some()
            || matches!(cause.downcast_ref::<ProbeError>(), Some(ProbeError::Backend { .. } | ProbeError::Lm(_)))
            || matches!(cause.downcast_ref::<ReprError>(), Some(ReprError::Lm(_)))
            || matches!(cause.downcast_ref::<ProtoQAError>(), Some(ProtoQAError::Lm(_)))
            || cause.downcast_ref::<commands::BackendFailure>().is_some();
        if backend {
            return EXIT_BACKEND;
        }
    }
    EXIT_CONFIG
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
