use std::process::ExitCode;

use clap::Parser;
use csl_cli::{dispatch, Cli, CliError, OUT_ENV};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let env_out = std::env::var_os(OUT_ENV);
    match dispatch(&cli, env_out.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            if let CliError::Usage(_) = e {
                eprintln!("For more information, try '--help'.");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
