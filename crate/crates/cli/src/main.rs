mod commands;
mod config;
mod exit;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dpstream", version, about = "Differentially private model release over data streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a stream through a scheduler and write metrics, traces and ledgers.
    Run(config::RunArgs),
    /// Print the event trace of a schedule without touching data.
    InspectSchedule(commands::InspectArgs),
    /// Re-charge a trace into a fresh ledger and check the budget.
    VerifyLedger(commands::VerifyArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => commands::cmd_run(args),
        Command::InspectSchedule(args) => commands::cmd_inspect_schedule(args),
        Command::VerifyLedger(args) => commands::cmd_verify_ledger(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {:#}", e.err);
            ExitCode::from(e.code)
        }
    }
}
