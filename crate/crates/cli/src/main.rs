use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use mlmc_grad_cli::{cmd_alloc, cmd_diag, cmd_run, load_config, CliError};

#[derive(Parser)]
#[command(name = "mlmc-grad", version, about = "Delayed MLMC gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable and applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// SGD runs writing `curve_<estimator>.csv` and `manifest.txt`.
    Run(Common),
    /// Decay-rate diagnostics writing `decay_variance.csv` and `decay_smoothness.csv`.
    Diag(Common),
    /// Print the MLMC sample allocation for `effective_n`.
    Alloc(Common),
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("MLMC_GRAD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("MLMC_GRAD_THREADS: cannot parse '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(c) => {
            let cfg = load_config(c.config.as_deref(), &c.set)?;
            for p in cmd_run(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Diag(c) => {
            let cfg = load_config(c.config.as_deref(), &c.set)?;
            for p in cmd_diag(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Alloc(c) => {
            let cfg = load_config(c.config.as_deref(), &c.set)?;
            print!("{}", cmd_alloc(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        error!("{msg}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mlmc-grad: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
