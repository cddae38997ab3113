//! `lsl`: build tasks, train latent subclass probes, select runs and
//! write reports.
//!
//! Every command prints one JSON summary line on stdout and exits non-zero
//! if any output could not be written.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "lsl", version, about = "Latent subclass learning probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a binary task file from annotated sentences.
    MakeTask(MakeTaskArgs),
    /// Train plain binary probes per hidden size and pick the smallest that passes.
    TuneHidden(TuneHiddenArgs),
    /// Train restarts and write one run directory per seed.
    Train(TrainArgs),
    /// Mark the run that agrees best with the others.
    Select(SelectArgs),
    /// Write metric, label-wise, nPMI, projector and summary reports.
    Report(ReportArgs),
    /// Run the regularizer ablation grid.
    Ablate(AblateArgs),
    /// Generate a synthetic benchmark with planted subclasses.
    Synth(SynthArgs),
}

/// Inputs shared by every training command.
#[derive(Args, Debug)]
struct TrainingInputs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, repeatable: `--set learning_rate=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reject unknown fields in task records and config files.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Strategy {
    /// Negatives drawn from each sentence's candidate spans.
    Candidates,
    /// Negatives drawn from all spans of each sentence.
    RandomSpans,
    /// Random unattached span pairs.
    RandomPairs,
    /// Closest unattached span pairs.
    ClosestPairs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Scope {
    PerPredicate,
    PerSentence,
}

#[derive(Args, Debug)]
struct MakeTaskArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Strategy::Candidates)]
    strategy: Strategy,
    /// Widest negative span for `random-spans`.
    #[arg(long)]
    max_width: Option<usize>,
    /// Negatives per positive.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    /// Budget scope for pair strategies.
    #[arg(long, value_enum, default_value_t = Scope::PerPredicate)]
    scope: Scope,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct TuneHiddenArgs {
    #[command(flatten)]
    inputs: TrainingInputs,
    /// Ascending hidden sizes, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = lsl_core::trainer::DEFAULT_CAPACITY_THRESHOLD)]
    threshold: f64,
    /// Where to record the choice as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    inputs: TrainingInputs,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Directory receiving `run-0`, `run-1`, ...
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Run directories written by `train`.
    #[arg(required = true, num_args = 2..)]
    runs: Vec<PathBuf>,
    /// Where to write `selection.json`; defaults to the first run's parent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directory to report on.
    #[arg(long)]
    run: PathBuf,
    /// Gold task file for the dev set; defaults to the labels stored with the run.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Further runs whose counts are summed into the nPMI report and whose
    /// scores join the summary table.
    #[arg(long = "with", value_name = "RUN")]
    with_runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    npmi: bool,
    /// Restrict the nPMI report to these labels, comma-separated.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    #[arg(long)]
    labelwise: bool,
    #[arg(long)]
    projector: bool,
    #[arg(long)]
    summary: bool,
    /// Encoder name for the summary table; defaults to each run's directory name.
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    inputs: TrainingInputs,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    num_subclasses: usize,
    #[arg(long, default_value_t = 5000)]
    positives: usize,
    #[arg(long, default_value_t = 0.5)]
    negative_fraction: f64,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    num_layers: usize,
    #[arg(long, default_value_t = 0)]
    signal_layer: usize,
    #[arg(long, default_value_t = 0.2)]
    dev_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    test_fraction: f64,
    #[arg(long, default_value = "synth")]
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeTask(a) => commands::make_task(a),
        Command::TuneHidden(a) => commands::tune_hidden(a),
        Command::Train(a) => commands::train(a),
        Command::Select(a) => commands::select(a),
        Command::Report(a) => commands::report(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
