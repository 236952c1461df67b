use std::path::PathBuf;
use std::process::ExitCode;

use asyncdiff::commands::{self, CompareInputs, Source};
use asyncdiff::{CliError, Overrides};
use clap::{Args, Parser, Subcommand};

/// Asynchronous diffusion learning: simulation and steady-state analysis.
///
/// Worker threads for parallel runs can be capped with ASYNCDIFF_THREADS.
#[derive(Parser)]
#[command(name = "asyncdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulator and write per-run and aggregate MSD as CSV.
    Simulate(RunArgs),
    /// Evaluate the steady-state MSD and stability constants.
    Theory(RunArgs),
    /// Simulate and analyze, then write merged CSV, report and SVG.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Reuse an existing simulation CSV instead of simulating.
        #[arg(long, value_name = "PATH")]
        from_csv: Option<PathBuf>,
        /// Reuse an existing theory report instead of recomputing it.
        #[arg(long, value_name = "PATH")]
        from_report: Option<PathBuf>,
    },
    /// Print or write a named configuration.
    Preset {
        /// case1, case2, case3, fedsgd or fedavg
        name: String,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        paper_scale: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH", required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Use a named preset instead of a config file.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output file; stdout when absent (compare requires a path).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    runs: Option<usize>,
    /// N = 10^6 samples per agent.
    #[arg(long)]
    paper_scale: bool,
    /// Fail rather than fall back to Monte-Carlo moments.
    #[arg(long)]
    exact: bool,
    #[arg(long, value_name = "N")]
    mc_draws: Option<usize>,
    /// Also write the generated datasets to this file.
    #[arg(long, value_name = "PATH")]
    dump_dataset: Option<PathBuf>,
}

impl RunArgs {
    fn source(&self) -> Source {
        match (&self.config, &self.preset) {
            (Some(p), _) => Source::File(p.clone()),
            (None, Some(n)) => Source::Preset(n.clone()),
            (None, None) => unreachable!("clap requires one of --config, --preset"),
        }
    }

    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            runs: self.runs,
            paper_scale: self.paper_scale,
            exact: self.exact,
            mc_draws: self.mc_draws,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let artifacts = match cli.command {
        Command::Simulate(a) => commands::simulate(&a.source(), &a.overrides(), a.out.clone(), a.dump_dataset.as_deref())?,
        Command::Theory(a) => commands::theory(&a.source(), &a.overrides(), a.out.clone(), a.dump_dataset.as_deref())?,
        Command::Compare {
            run: a,
            from_csv,
            from_report,
        } => {
            let inputs = CompareInputs {
                csv: from_csv,
                report: from_report,
            };
            commands::compare(&a.source(), &a.overrides(), a.out.clone(), &inputs, a.dump_dataset.as_deref())?
        }
        Command::Preset {
            name,
            out,
            seed,
            runs,
            paper_scale,
        } => {
            let o = Overrides {
                seed,
                runs,
                paper_scale,
                ..Overrides::default()
            };
            commands::preset_config(&name, &o, out)?
        }
    };
    for a in &artifacts {
        a.write()?;
        if let Some(p) = &a.path {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Diffusion(_) | CliError::Theory(_) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
