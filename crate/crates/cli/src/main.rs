use std::process::ExitCode;

use clap::Parser;
use deanchor_cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("deanchor: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
