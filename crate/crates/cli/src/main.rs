use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    pds_cli::main_with(pds_cli::Cli::parse())
}
