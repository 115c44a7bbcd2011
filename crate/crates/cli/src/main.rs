use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use labourflow::pipeline::{Pipeline, PipelineConfig, ReportFormat, Stage};
use labourflow::synth::{generate, Scenario};
use labourflow::Error;
use tracing_subscriber::EnvFilter;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Labour-flow intentions and job-demand analysis from search logs and postings.
#[derive(Debug, Parser)]
#[command(name = "labourflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run pipeline stages.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of ingest,graph,metrics,communities,demand,correlate,report.
        #[arg(long, default_value = "all")]
        stages: String,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_parser = ["csv", "json"])]
        format: Option<String>,
    },
    /// Check a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic scenario (registry, logs, postings, ground truth, config).
    Generate {
        /// Directory to write into.
        #[arg(long)]
        output: PathBuf,
        /// Scenario JSON; omitted fields take their defaults.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Validation(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InfeasibleScenario(_) => Failure::Validation(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

fn load_config(path: &PathBuf) -> Result<PipelineConfig, Failure> {
    if !path.exists() {
        return Err(Failure::Validation(format!("config file {} does not exist", path.display())));
    }
    Ok(PipelineConfig::load(path)?)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            stages,
            workers,
            output,
            format,
        } => {
            let mut c = load_config(&config)?;
            if let Some(w) = workers {
                c.workers = w;
            }
            if let Some(o) = output {
                c.output = o;
            }
            if let Some(f) = format {
                c.format = f.parse::<ReportFormat>()?;
            }
            let stages = Stage::parse_list(&stages).map_err(|e| Failure::Validation(e.to_string()))?;
            let problems = c.validate();
            if !problems.is_empty() {
                return Err(Failure::Validation(problems.join("\n")));
            }
            Pipeline::new(&c).run(&stages)?;
            Ok(())
        }
        Command::Validate { config } => {
            let problems = if !config.exists() {
                vec![format!("config file {} does not exist", config.display())]
            } else {
                match PipelineConfig::load(&config) {
                    Ok(c) => c.validate(),
                    Err(Error::Config(p)) => p,
                    Err(e) => return Err(Failure::Runtime(e)),
                }
            };
            if problems.is_empty() {
                println!("ok");
                Ok(())
            } else {
                Err(Failure::Validation(problems.join("\n")))
            }
        }
        Command::Generate { output, scenario, seed } => {
            let mut s = match scenario {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| {
                        Failure::Validation(format!("cannot read scenario {}: {e}", path.display()))
                    })?;
                    Scenario::from_json(&text).map_err(|e| Failure::Validation(e.to_string()))?
                }
                None => Scenario::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let g = generate(&s, &output)?;
            println!(
                "wrote {} queries ({} flow intents) and {} postings to {}",
                g.totals.queries,
                g.totals.intents,
                g.totals.postings,
                output.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
