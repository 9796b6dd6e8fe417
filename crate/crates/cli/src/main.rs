use std::process::ExitCode;

fn main() -> ExitCode {
    reportgen_cli::run(std::env::args_os())
}
