use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sawa_core::experiment::{validate_config, Experiment};
use sawa_core::Error;

/// Stable prediction under covariate shift with sample-weight averaging.
#[derive(Parser)]
#[command(name = "sawa", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "SAWA_THREADS", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its reports.
    Run { config: PathBuf },
    /// Check a config file and report every problem found.
    Validate { config: PathBuf },
    /// Write the synthetic training set of the first repeat as CSV.
    GenData { config: PathBuf, out: PathBuf },
    /// Learn weights for the first reweighting method and write them as CSV.
    Weights { config: PathBuf, out: PathBuf },
}

const CONFIG_ERROR: u8 = 1;
const RUN_FAILURE: u8 = 2;

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) => ExitCode::from(CONFIG_ERROR),
        _ => ExitCode::from(RUN_FAILURE),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: thread count must be at least 1");
            return ExitCode::from(CONFIG_ERROR);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(RUN_FAILURE);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => exit_for(&e),
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Validate { config } => {
            let exp = validate_config(&config)?;
            println!(
                "{}: ok ({} methods, {} repeats)",
                config.display(),
                exp.methods.len(),
                exp.config.repeats
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config } => {
            let exp = validate_config(&config)?;
            let outcome = exp.execute()?;
            print_summary(&exp, &outcome);
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &outcome.failures {
                    eprintln!("failed: repeat {} {}: {}", f.repeat, f.method, f.error);
                }
                Ok(ExitCode::from(RUN_FAILURE))
            }
        }
        Command::GenData { config, out } => {
            let exp = validate_config(&config)?;
            let data = exp.generate_training_data()?;
            data.write_csv(BufWriter::new(File::create(&out)?))?;
            println!("wrote {} rows to {}", data.n(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Weights { config, out } => {
            let exp = validate_config(&config)?;
            let (method, weights) = exp.export_weights()?;
            weights.write_csv(BufWriter::new(File::create(&out)?))?;
            println!(
                "wrote {} {method} weights to {}",
                weights.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_summary(exp: &Experiment, outcome: &sawa_core::experiment::Outcome) {
    println!(
        "{:<24} {:>10} {:>10} {:>10} {:>10}",
        "method", "mean_err", "std_err", "max_err", "beta_err"
    );
    for a in &outcome.aggregate {
        let beta = a
            .beta_error
            .map(|b| format!("{b:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<24} {:>10.4} {:>10.4} {:>10.4} {:>10}",
            a.method, a.mean_error, a.std_error, a.max_error, beta
        );
    }
    println!("reports written to {}", exp.output_dir().display());
}
