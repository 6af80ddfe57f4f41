use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = dbmvd_cli::Cli::parse();
    match dbmvd_cli::execute(&cli, &mut std::io::stdout()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
