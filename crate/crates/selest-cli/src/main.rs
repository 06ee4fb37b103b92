//! `selest`: learned selectivity estimation over CSV-ingested relations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "selest", version, about = "Selectivity estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every randomized step; identical commands with the same seed
    /// produce identical outputs.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON config file overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output path (file or directory, depending on the command).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic table as CSV.
    Synth {
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        /// Where to write ingestion hints for the numeric columns.
        #[arg(long)]
        hints_out: Option<PathBuf>,
    },
    /// Ingest a CSV file into a relation artifact.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        /// JSON map: column name -> {"kind": ..., "buckets": ...}.
        #[arg(long)]
        hints: Option<PathBuf>,
    },
    /// Generate a workload file from a relation.
    GenWorkload {
        #[arg(long)]
        relation: PathBuf,
        /// train | test | augment | range-train
        #[arg(long)]
        kind: String,
        #[arg(long)]
        budget: usize,
        /// Base workload (required for kind=augment).
        #[arg(long)]
        workload: Option<PathBuf>,
        /// Also write the training set as CSV.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Train a model on a relation artifact.
    Train {
        /// made | supervised
        #[arg(long)]
        kind: String,
        #[arg(long)]
        relation: PathBuf,
        /// Labeled training queries (supervised) or a point-query workload
        /// for weighted density training (made).
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        kappa: Option<usize>,
        /// mse | qerror (supervised only)
        #[arg(long)]
        loss: Option<String>,
        /// binary | onehot tuple encoding (made only)
        #[arg(long)]
        encoding: Option<String>,
    },
    /// Estimate selectivities for a query file against a saved model.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Evaluate models and baselines against a labeled workload.
    Evaluate {
        #[arg(long)]
        relation: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        model: Vec<PathBuf>,
        /// Include the attribute-value-independence baseline.
        #[arg(long)]
        avi: bool,
        /// Include a Bernoulli row-sample baseline at this rate.
        #[arg(long)]
        sample_rate: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Fine-tune a saved model on new rows or new queries.
    Incremental {
        #[arg(long)]
        model: PathBuf,
        /// CSV batch conforming to the model's schema (made).
        #[arg(long)]
        new_rows: Option<PathBuf>,
        /// Labeled queries JSONL (supervised).
        #[arg(long)]
        new_queries: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", serde_json::json!({"error": {"message": format!("{err:#}")}}));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let output = |what: &str| -> anyhow::Result<PathBuf> {
        cli.output.clone().ok_or_else(|| anyhow::anyhow!("--output is required for {what}"))
    };

    match cli.command {
        Command::Synth { rows, hints_out } => {
            commands::cmd_synth(rows, config.seed, &output("synth")?, hints_out.as_deref())
        }
        Command::Ingest { csv, hints } => {
            commands::cmd_ingest(&csv, hints.as_deref(), &output("ingest")?)
        }
        Command::GenWorkload { relation, kind, budget, workload, csv_out } => {
            commands::cmd_gen_workload(
                &relation,
                &kind,
                budget,
                workload.as_deref(),
                csv_out.as_deref(),
                &output("gen-workload")?,
                &config,
            )
        }
        Command::Train { kind, relation, workload, epochs, kappa, loss, encoding } => {
            if let Some(e) = epochs {
                config.epochs = e;
            }
            if let Some(k) = kappa {
                config.kappa = k;
            }
            if let Some(l) = loss {
                config.loss = match l.as_str() {
                    "mse" => selest::supervised::SupervisedLoss::Mse,
                    "qerror" => selest::supervised::SupervisedLoss::QError,
                    other => anyhow::bail!("unknown loss {other:?} (expected mse|qerror)"),
                };
            }
            if let Some(enc) = encoding {
                config.encoding = match enc.as_str() {
                    "binary" => selest::encoding::EncodingMode::Binary,
                    "onehot" => selest::encoding::EncodingMode::OneHot,
                    other => anyhow::bail!("unknown encoding {other:?} (expected binary|onehot)"),
                };
            }
            commands::cmd_train(&kind, &relation, workload.as_deref(), &output("train")?, &config)
        }
        Command::Estimate { model, queries, budget } => {
            if let Some(b) = budget {
                config.sample_budget = b;
            }
            commands::cmd_estimate(&model, &queries, &output("estimate")?, &config)
        }
        Command::Evaluate { relation, workload, model, avi, sample_rate, budget } => {
            if let Some(b) = budget {
                config.sample_budget = b;
            }
            commands::cmd_evaluate(
                &relation,
                &workload,
                &model,
                avi,
                sample_rate,
                &output("evaluate")?,
                &config,
            )
        }
        Command::Incremental { model, new_rows, new_queries, epochs } => {
            if let Some(e) = epochs {
                config.incremental_epochs = e;
            }
            commands::cmd_incremental(
                &model,
                new_rows.as_deref(),
                new_queries.as_deref(),
                &output("incremental")?,
                &config,
            )
        }
    }
}
