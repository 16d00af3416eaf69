use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lplab::config::{load_config, Format};
use lplab::report::{builtins, run_experiment, write_report};
use lplab::Error;

#[derive(Parser)]
#[command(name = "lplab", version, about = "Product Littlewood-Paley square function experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suites enabled in a config and write the report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated formats (overrides `output.formats`).
        #[arg(long, value_delimiter = ',')]
        format: Option<Vec<FormatArg>>,
        #[arg(long)]
        threads: Option<usize>,
        /// Corpus seed (overrides `corpus.seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the built-in profiles, models, weights and checks.
    ListBuiltins,
}

fn config_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListBuiltins => {
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&builtins()).expect("json"));
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(_) => {
                println!("ok: {}", config.display());
                ExitCode::SUCCESS
            }
            Err(e) => config_error(&e),
        },
        Command::Run { config, out, format, threads, seed } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return config_error(&e),
            };
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
            if let Some(f) = format {
                cfg.output.formats = f
                    .into_iter()
                    .map(|f| match f {
                        FormatArg::Json => Format::Json,
                        FormatArg::Csv => Format::Csv,
                    })
                    .collect();
            }
            let dir = match out.or_else(|| cfg.output.dir.clone().map(PathBuf::from)) {
                Some(d) => d,
                None => {
                    eprintln!("error: no output directory (pass --out or set output.dir)");
                    return ExitCode::from(1);
                }
            };
            let report = match run_experiment(&cfg, threads) {
                Ok(r) => r,
                Err(e @ Error::ConfigInvalid(_)) => return config_error(&e),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match write_report(&report, &dir, &cfg.output.formats) {
                Ok(paths) => {
                    for p in paths {
                        println!("wrote {}", p.display());
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
            for (name, check) in &report.checks {
                println!("{name}: {}", check.status.tag());
            }
            ExitCode::from(report.exit_code() as u8)
        }
    }
}
