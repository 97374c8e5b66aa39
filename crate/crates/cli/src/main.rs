use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lie_errdyn_cli::{run, threads_from_env, CliError, Command, Overrides};

#[derive(Parser)]
#[command(name = "lie-errdyn", version, about = "Invariant-error dynamics on matrix Lie groups")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classify the configured field and check the transport identity.
    Check(Common),
    /// Integrate the error ODE along both routes and write propagate.csv.
    Propagate(Common),
    /// Strong and weak Monte Carlo comparison of the two SDE routes.
    Sde(Common),
    /// Compare closed forms and series against finite-difference oracles.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
}

fn execute(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let (command, args) = match cli.command {
        Cmd::Check(a) => (Command::Check, a),
        Cmd::Propagate(a) => (Command::Propagate, a),
        Cmd::Sde(a) => (Command::Sde, a),
        Cmd::Oracle(a) => (Command::Oracle, a),
    };
    let overrides = Overrides {
        seed: args.seed,
        paths: args.paths,
        dt: args.dt,
    };
    Ok(run(command, &args.config, &overrides, args.out.as_deref())?.summary)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
