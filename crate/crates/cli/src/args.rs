use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "charsub", version, about = "Character-attributed subtitles from pre-extracted episode features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select audio exemplars from lip-sync and visual identity observations.
    BuildExemplars(BuildArgs),
    /// Label every segment and write assignments and subtitles.
    Assign(AssignArgs),
    /// Score assignments against a reference annotation.
    Eval(EvalArgs),
    /// Grid-search the embedding thresholds by validation accuracy.
    Tune(TuneArgs),
    /// Precision against proportion of classified segments over a threshold grid.
    Curve(CurveArgs),
    /// Schema and cross-reference check of a bundle, without processing.
    Validate(ValidateArgs),
    /// Write a deterministic synthetic corpus and matching oracle stub.
    Synth(SynthArgs),
}

/// Corpus inputs. `--bundle` supplies the standard file names; the individual
/// flags override single files.
#[derive(Debug, Clone, Args)]
pub struct BundleArgs {
    #[arg(long, value_name = "DIR")]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub segments: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub visual: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub overlap: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub cast: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,
    /// Reject embeddings whose length differs.
    #[arg(long, value_name = "N")]
    pub expected_dim: Option<usize>,
    /// Restrict processing to these episodes (repeatable).
    #[arg(long = "episode", value_name = "NAME")]
    pub episodes: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON file with engine hyperparameters; missing keys take defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. `--set assign_threshold=0.6` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Episodes processed concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// Replay language-model answers from a JSON-lines stub.
    #[arg(long, value_name = "FILE", conflicts_with = "no_llm")]
    pub stub: Option<PathBuf>,
    /// Skip the language-model rung; its segments stay unresolved.
    #[arg(long)]
    pub no_llm: bool,
    /// Exit with status 3 if any oracle request exhausts its retries.
    #[arg(long)]
    pub strict_oracle: bool,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Exemplars from `build-exemplars`; rebuilt in place when omitted.
    #[arg(long, value_name = "FILE")]
    pub exemplars: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SubtitleKind::Srt)]
    pub format: SubtitleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SubtitleKind {
    Srt,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Supplies `reference.*` and `cast.json` when the explicit flags are absent.
    #[arg(long, value_name = "DIR")]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub cast: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub assignments: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value_t = DerModeArg::Identification)]
    pub der_mode: DerModeArg,
    #[arg(long = "episode", value_name = "NAME")]
    pub episodes: Vec<String>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DerModeArg {
    /// Hypothesis names are scored as given.
    Identification,
    /// Hypothesis speakers are mapped one-to-one onto reference speakers first.
    Optimal,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long, value_name = "FILE")]
    pub exemplars: Option<PathBuf>,
    /// Comma-separated values of `assign_threshold`.
    #[arg(long, value_name = "LIST", value_delimiter = ',', num_args = 0..)]
    pub grid: Vec<f64>,
    /// Comma-separated values of `high_confidence_threshold`; defaults to the configured one.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub high_grid: Vec<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_name = "FILE")]
    pub exemplars: Option<PathBuf>,
    /// Comma-separated thresholds; defaults to 0, 0.1, ..., 2.0.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub grid: Vec<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub exemplars: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub assignments: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub stub: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    #[arg(long, default_value_t = 120)]
    pub segments: usize,
    #[arg(long, default_value_t = 4)]
    pub characters: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Also record a stub answering every language-model query with the true speaker.
    #[arg(long)]
    pub with_stub: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}
