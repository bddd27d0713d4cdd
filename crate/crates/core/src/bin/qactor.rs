use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qactor::config::{parse_config, parse_sweep};
use qactor::experiment::{run_to_dir, sweep_to_dir, RunSummary};

#[derive(Parser)]
#[command(name = "qactor", version, about = "Online active learning on noisy label streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration for all its repetitions.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every mode/metric/policy combination listed in the configuration.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_summary(s: &RunSummary) {
    println!(
        "{:<28} final_acc={:.4} last_quarter_acc={:.4} queries={:.1}",
        s.config.cell_name(),
        s.mean_final_test_acc,
        s.mean_last_quarter_test_acc,
        s.mean_total_queries
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => read(&config)
            .and_then(|text| parse_config(&text).map_err(|e| e.to_string()))
            .and_then(|cfg| run_to_dir(&cfg, &out).map_err(|e| e.to_string()))
            .map(|s| print_summary(&s)),
        Command::Sweep { config, out } => read(&config)
            .and_then(|text| parse_sweep(&text).map_err(|e| e.to_string()))
            .and_then(|cells| sweep_to_dir(&cells, &out).map_err(|e| e.to_string()))
            .map(|all| all.iter().for_each(print_summary)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
