use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdafpf_cli::config::ExperimentConfig;
use pdafpf_cli::presets::list_scenarios;
use pdafpf_cli::verify::{verify, Suite, VerifyOptions};
use pdafpf_cli::{run_experiment, Result};

#[derive(Parser)]
#[command(name = "pdafpf", version, about = "Feedback particle filters with data association")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment.
    Run {
        /// JSON experiment config.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Run a named scenario with its defaults instead of a config file.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Base seed; run k uses seed + k.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the built-in scenarios.
    List,
    /// Run a verification suite and print its JSON report.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
        #[arg(long, default_value_t = 1.0)]
        size_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // Only fails if the pool already exists, which it cannot here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            preset,
            output_dir,
            seed,
            runs,
            jobs,
        } => {
            set_jobs(jobs);
            let mut cfg = match (config, preset) {
                (Some(path), _) => ExperimentConfig::load(&path)?,
                (None, Some(name)) => ExperimentConfig::preset(&name),
                (None, None) => {
                    return Err(pdafpf_cli::CliError::Config("pass --config or --preset".into()));
                }
            };
            if output_dir.is_some() {
                cfg.output_dir = output_dir;
            }
            if let Some(r) = runs {
                cfg.runs = r;
            }
            let result = run_experiment(&cfg, seed)?;
            print!("{}", result.summary.render());
            if let Some(dir) = &cfg.output_dir {
                println!("wrote {}", dir.display());
            }
            Ok(true)
        }
        Command::List => {
            for p in list_scenarios() {
                println!("{:<22} {}", p.name, p.description);
            }
            Ok(true)
        }
        Command::Verify {
            suite,
            tolerance_scale,
            size_scale,
            seed,
            jobs,
        } => {
            set_jobs(jobs);
            let report = verify(
                suite,
                &VerifyOptions {
                    tolerance_scale,
                    size_scale,
                    seed,
                },
            )?;
            for c in &report.checks {
                eprintln!("{}", c.summary_line());
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.passed)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
