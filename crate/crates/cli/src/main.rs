use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use degenctrl_cli::{run_scenario, run_suite, validate, RunOutcome};

#[derive(Parser)]
#[command(name = "degenctrl", version, about = "Degenerate parabolic control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run { config: PathBuf },
    /// Run every scenario file in a directory.
    Suite { dir: PathBuf },
    /// Parse and validate a scenario without running it.
    Validate { config: PathBuf },
}

fn finish(outcome: RunOutcome) -> ExitCode {
    let (text, _) = degenctrl_cli::emit_report(&outcome.sections);
    print!("{text}");
    println!("artifacts: {}", outcome.output.display());
    ExitCode::from(outcome.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run_scenario(&config).map(finish),
        Command::Suite { dir } => run_suite(&dir).map(finish),
        Command::Validate { config } => validate(&config).map(|sc| {
            println!("{}: ok ({})", sc.name, sc.task.name());
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
