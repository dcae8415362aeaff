use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ttsa::harness::{main_with, Command, Invocation};

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Run,
    Mc,
    Rate,
    Verify,
    Lemmas,
    Envelope,
    Ode,
    Constants,
}

/// Two-time-scale stochastic approximation experiments.
///
/// Exit codes: 0 success, 1 a report did not pass, 2 config error, 3 divergence.
#[derive(Parser)]
#[command(name = "ttsa", version)]
struct Cli {
    command: Cmd,
    /// TOML experiment config. Defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config and TTSA_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the CSV table here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Run => Command::Run,
        Cmd::Mc => Command::Mc,
        Cmd::Rate => Command::Rate,
        Cmd::Verify => Command::Verify,
        Cmd::Lemmas => Command::Lemmas,
        Cmd::Envelope => Command::Envelope,
        Cmd::Ode => Command::Ode,
        Cmd::Constants => Command::Constants,
    };
    let inv = Invocation {
        config_path: cli.config,
        seed: cli.seed,
        csv_path: cli.csv,
        json_path: cli.json,
        print_config: cli.print_config,
    };
    ExitCode::from(main_with(command, &inv) as u8)
}
