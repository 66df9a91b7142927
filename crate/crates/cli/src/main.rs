use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match pathflow_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    ExitCode::from(pathflow_cli::run(&cli))
}
