use std::process::ExitCode;

use clap::Parser;
use soh_fusion_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sohfuse: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
