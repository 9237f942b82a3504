use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinecho_cli::commands;
use spinecho_cli::config::{load_jobs, CliResult, Job, Source};
use spinecho_cli::presets;

#[derive(Parser)]
#[command(name = "spinecho", version, about = "Dipolar spin-1/2 ensembles under multiple-pulse NMR sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ensemble echo trains to CSV plus a JSON sidecar.
    Run(Common),
    /// Average Hamiltonian report for one cycle.
    Aht(Common),
    /// Density matrix snapshots (JSON + PPM).
    Snapshot(Common),
    /// Flip-flop-free analytic envelope.
    Analytic(Common),
    /// Print the built-in presets.
    ListPresets,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Override a config value by dotted path, e.g. `disorder.n_spins=6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Run only the named variants (repeatable).
    #[arg(long = "variant")]
    variants: Vec<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "spinecho-out")]
    out: PathBuf,
}

impl Common {
    fn jobs(&self) -> CliResult<Vec<Job>> {
        load_jobs(&Source {
            config: self.config.as_deref(),
            preset: self.preset.as_deref(),
            sets: &self.sets,
            variants: &self.variants,
            workers: self.workers,
            seed: self.seed,
        })
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::ListPresets => {
            for name in presets::names() {
                println!("{name}\t{}", presets::description(name).unwrap_or_default());
            }
        }
        Command::Run(c) => {
            for job in c.jobs()? {
                let path = commands::run(&job, &c.out)?;
                println!("{}", path.display());
            }
        }
        Command::Aht(c) => {
            for job in c.jobs()? {
                let report = commands::aht(&job, &c.out)?;
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
        }
        Command::Snapshot(c) => {
            for job in c.jobs()? {
                let n = commands::snapshot(&job, &c.out)?;
                println!("{n} snapshots written to {}", job.output_dir(&c.out).display());
            }
        }
        Command::Analytic(c) => {
            for job in c.jobs()? {
                let path = commands::analytic(&job, &c.out)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
