use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use mirrorscan_cli::{execute, Cli, Console};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    let (stdout, stderr) = (std::io::stdout(), std::io::stderr());
    let (mut out, mut err) = (stdout.lock(), stderr.lock());
    let result = execute(
        &cli,
        &argv,
        &mut Console {
            stdout: &mut out,
            stderr: &mut err,
        },
    );
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
