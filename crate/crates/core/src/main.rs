use std::process::ExitCode;

use clap::Parser;
use noiseinit::cli::{expand_config, init_workers, run, Cli};

fn main() -> ExitCode {
    let outcome = expand_config(std::env::args_os().collect()).and_then(|args| {
        init_workers()?;
        let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
        run(cli, &mut std::io::stdout().lock())
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
