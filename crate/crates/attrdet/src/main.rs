use std::process::ExitCode;

fn main() -> ExitCode {
    attrdet::cli::run(std::env::args_os().collect())
}
