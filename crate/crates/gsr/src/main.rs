use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gsr::commands::{self, CliError};
use gsr::config::{RunConfig, KEYS};
use gsr::ingest::Format;
use gsr::report::render_table;

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  I/O failure while writing outputs
  2  data error (missing or malformed input, empty dataset)
  3  configuration or usage error
  4  numerical error (non-finite loss or parameters)
  5  checkpoint incompatible with the configuration or dataset

Set GSR_LOG (error, warn, info, debug, trace) for log output on stderr.";

/// Gaussian-distribution sequential recommender.
#[derive(Parser, Debug)]
#[command(name = "gsr", version, after_help = EXIT_HELP)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set dim=32`. Repeatable; wins over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Training seed for `train`, candidate seed for `evaluate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluation threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the dataset cache from a raw interaction log and print its statistics.
    Preprocess {
        input: PathBuf,
        /// Cache path; defaults to the `dataset` key.
        output: Option<PathBuf>,
        /// csv, tsv, jsonl or a single delimiter character.
        #[arg(long)]
        format: Option<String>,
    },
    /// Train on the dataset cache; writes the history log and best checkpoint.
    Train,
    /// Score the checkpoint on held-out items; prints and writes the report.
    Evaluate {
        /// Testing aid: report on these comma-separated ranks instead of a model.
        #[arg(long, hide = true, value_delimiter = ',')]
        rank_fixture: Option<Vec<usize>>,
    },
    /// Print every configuration key with its resolved value.
    ShowConfig,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        let key = if matches!(cli.command, Command::Evaluate { .. }) { "eval_seed" } else { "seed" };
        overrides.push(format!("{key}={s}"));
    }
    if let Some(w) = cli.workers {
        overrides.push(format!("workers={w}"));
    }
    if let Command::Preprocess { format: Some(f), .. } = &cli.command {
        if Format::parse(f).is_none() {
            return Err(CliError::Config(format!("unknown input format {f:?}")));
        }
        overrides.push(format!("input_format={f}"));
    }
    Ok(RunConfig::resolve(cli.config.as_deref(), &overrides)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Preprocess { input, output, .. } => {
            let out = output.unwrap_or_else(|| cfg.dataset.clone());
            let ds = commands::preprocess(&input, &out, &cfg)?;
            print!("{}", commands::format_stats(&ds));
        }
        Command::Train => {
            let out = commands::train(&cfg)?;
            println!(
                "best epoch {} of {}, validation MRR {:.6}; checkpoint {}, history {}",
                out.best_epoch,
                out.history.len(),
                out.best_valid_mrr,
                cfg.checkpoint.display(),
                cfg.history.display()
            );
        }
        Command::Evaluate { rank_fixture } => {
            let report = match rank_fixture {
                Some(ranks) => commands::evaluate_ranks(&cfg, &ranks)?,
                None => commands::evaluate(&cfg)?,
            };
            print!("{}", render_table(&report));
        }
        Command::ShowConfig => {
            debug_assert_eq!(KEYS.len(), KEYS.iter().filter(|(k, _)| cfg.get(k).is_some()).count());
            print!("{}", cfg.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GSR_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gsr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
