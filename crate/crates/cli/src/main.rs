use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use forgery_ensemble_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(output.stdout.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(forgery_ensemble_cli::EXIT_IO as u8);
            }
            ExitCode::from(output.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
