mod commands;
mod config;

use std::process::ExitCode;

use absieve_core::runner::ExplainMode;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::filter::LevelFilter;

use commands::{EvaluateArgs, ExplainArgs, ScreenArgs, Selection};
use config::{AppConfig, Overrides};

/// Screen titles and abstracts with a chat-completion model and score the
/// decisions against human labels.
#[derive(Debug, Parser)]
#[command(name = "absieve", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ask the model for a decision on every undecided row
    Screen {
        /// Only this dataset (default: every dataset in the manifest)
        #[arg(long)]
        dataset: Option<String>,
        /// Continue from the existing results file
        #[arg(long)]
        resume: bool,
        /// Stop after dispatching this many rows
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Ask the model to explain decisions for a subset of rows
    Explain {
        #[command(flatten)]
        select: SelectArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::Explain)]
        mode: ModeArg,
    },
    /// Same as `explain --mode reflect`: only rows where model and human disagree
    Reflect {
        #[command(flatten)]
        select: SelectArgs,
    },
    /// Score one decision column against another
    Evaluate {
        /// Dataset to score (repeatable)
        #[arg(long = "dataset", conflicts_with = "all")]
        datasets: Vec<String>,
        /// Every manifest dataset that has a results file
        #[arg(long)]
        all: bool,
        #[arg(long, default_value = "human_decision")]
        truth: String,
        #[arg(long, default_value = "decision")]
        pred: String,
        /// Also score all datasets pooled into one matrix
        #[arg(long)]
        pooled: bool,
    },
    /// Estimate tokens, cost and minimum wall time of a screening run
    EstimateCost {
        #[arg(long)]
        dataset: Option<String>,
    },
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("selection").required(true).args(["sample", "rows"])))]
struct SelectArgs {
    #[arg(long)]
    dataset: String,
    /// Pick this many eligible rows at random
    #[arg(long)]
    sample: Option<usize>,
    /// Explicit row indices, comma separated
    #[arg(long, value_delimiter = ',')]
    rows: Option<Vec<usize>>,
    /// Seed for --sample
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Explain,
    Reflect,
}

impl SelectArgs {
    fn into_explain(self, mode: ExplainMode) -> ExplainArgs {
        let selection = match (self.rows, self.sample) {
            (Some(rows), _) => Selection::Rows(rows),
            (None, Some(k)) => Selection::Sample(k),
            (None, None) => unreachable!("clap requires one of --rows/--sample"),
        };
        ExplainArgs {
            dataset: self.dataset,
            selection,
            mode,
            seed: self.seed,
        }
    }
}

async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = AppConfig::load(&cli.overrides)?;
    match cli.command {
        Command::Screen { dataset, resume, limit } => {
            commands::screen(&cfg, ScreenArgs { dataset, resume, limit }).await
        }
        Command::Explain { select, mode } => {
            let mode = match mode {
                ModeArg::Explain => ExplainMode::Explain,
                ModeArg::Reflect => ExplainMode::Reflect,
            };
            commands::explain(&cfg, select.into_explain(mode)).await
        }
        Command::Reflect { select } => commands::explain(&cfg, select.into_explain(ExplainMode::Reflect)).await,
        Command::Evaluate {
            datasets,
            all,
            truth,
            pred,
            pooled,
        } => commands::evaluate(
            &cfg,
            EvaluateArgs {
                datasets,
                all,
                truth,
                pred,
                pooled,
            },
        ),
        Command::EstimateCost { dataset } => commands::estimate(&cfg, dataset.as_deref()),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::WARN,
        1 => LevelFilter::INFO,
        _ => LevelFilter::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    match run(cli).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
