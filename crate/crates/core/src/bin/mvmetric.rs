use std::process::ExitCode;

fn main() -> ExitCode {
    mvmetric::cli::run(std::env::args_os())
}
