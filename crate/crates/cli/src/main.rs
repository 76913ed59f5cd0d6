use std::process::ExitCode;

use clap::Parser;
use mtl_balance_cli::app::{execute, Cli};

fn main() -> ExitCode {
    ExitCode::from(execute(Cli::parse()))
}
