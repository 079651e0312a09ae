//! `semforge` command line: fit a model, generate random cases, run benchmark campaigns.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use semforge::bench::{run_campaign, Campaign};
use semforge::generator::{generate, GenConfig};
use semforge::report::Report;
use semforge::stats::{gather_statistics, FimMode, StatsOptions};
use semforge::{parse, Dataset, Method, MethodConfig, Model, ObjectiveKind, Optimizer};

#[derive(Parser)]
#[command(name = "semforge", version, about = "Structural equation modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a model against a CSV dataset.
    Fit {
        model: PathBuf,
        data: PathBuf,
        /// Objective to minimize. Repeat to chain fits, each starting where the last ended.
        #[arg(long = "objective", default_value = "MLW")]
        objectives: Vec<ObjectiveKind>,
        #[arg(long, default_value = "SLSQP")]
        method: Method,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Minibatch size for Adam, Nesterov and SGD.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Print standard errors, p-values and fit indices.
        #[arg(long)]
        stats: bool,
        /// Fisher information used for standard errors: expected or observed.
        #[arg(long, default_value = "expected")]
        fim: FimMode,
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a random model, its true parameters and a dataset.
    Generate {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a benchmark campaign and write records.csv and summary.json.
    Bench {
        campaign: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Overrides the seed in the campaign file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            model,
            data,
            objectives,
            method,
            max_iter,
            learning_rate,
            batch_size,
            stats,
            fim,
            json,
            seed,
        } => {
            let text = fs::read_to_string(&model).with_context(|| format!("reading {}", model.display()))?;
            let desc = parse(&text)?;
            let data = Dataset::from_csv_path(&data)?;
            let mut cfg = MethodConfig::new(method);
            cfg.seed = seed;
            cfg.batch_size = batch_size;
            if let Some(m) = max_iter {
                cfg.max_iter = m;
            }
            if let Some(lr) = learning_rate {
                cfg.learning_rate = lr;
            }
            let mut opt = Optimizer::new(Model::new(desc, &data)?);
            for objective in objectives {
                opt.optimize(objective, &cfg)?;
            }
            let statistics = if stats {
                Some(gather_statistics(&opt, &StatsOptions { fim_mode: fim, log_likelihood: None })?)
            } else {
                None
            };
            let report = Report::new(&opt, statistics.as_ref());
            if json {
                println!("{}", report.to_json()?);
            } else {
                print!("{}", report.to_text());
            }
            if !report.converged {
                eprintln!("warning: optimizer did not converge");
            }
        }
        Command::Generate { config, output, seed } => {
            let mut cfg: GenConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let case = generate(&cfg)?;
            case.write_to(&output)?;
            eprintln!(
                "wrote model.txt, params.json and data.csv ({} rows) to {}",
                case.dataset.n_samples(),
                output.display()
            );
        }
        Command::Bench { campaign, output, seed } => {
            let mut c: Campaign = read_json(&campaign)?;
            if let Some(s) = seed {
                c.seed = s;
            }
            let result = run_campaign(&c)?;
            result.write_to(&output)?;
            for s in &result.summary.sets {
                let failures: Vec<String> = s.failures.iter().map(|(k, v)| format!("{k} {v}")).collect();
                println!("set {}: {}", s.set, failures.join(", "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
