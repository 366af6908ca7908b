use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use etcon::experiment::{self, ExperimentConfig};
use etcon::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "etcon", version, about = "Adaptive event-triggered consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one experiment and write CSV and JSON outputs.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the designed gain matrices.
    Gains { config: PathBuf },
    /// Run the experiment once per parameter value.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Assumption => 3,
        ErrorKind::Runtime => 4,
    }
}

fn execute(cmd: Command) -> etcon::Result<()> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let exp = cfg.build()?;
            let dir = experiment::resolve_out_dir(out.as_deref(), &cfg);
            let outcome = experiment::run(&exp, &dir)?;
            let s = &outcome.summary;
            println!(
                "{} agents, {} events, final error {:.6e}, zeno {} -> {}",
                s["n_agents"],
                s["events"]["total"],
                s["final_error"].as_f64().unwrap_or(f64::NAN),
                s["zeno"]["verdict"].as_str().unwrap_or("?"),
                dir.display()
            );
        }
        Command::Gains { config } => {
            let exp = ExperimentConfig::load(&config)?.build()?;
            print!("{}", experiment::format_gains(&exp.gains()?));
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let values: Vec<String> = values.into_iter().filter(|v| !v.trim().is_empty()).collect();
            let dir = experiment::resolve_out_dir(out.as_deref(), &cfg);
            let table = experiment::sweep(&cfg, &param, &values, &dir)?;
            for row in table["runs"].as_array().into_iter().flatten() {
                println!(
                    "{param}={} events={} final_error={}",
                    row["value"].as_str().unwrap_or("?"),
                    row["events"],
                    row["final_error"]
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
