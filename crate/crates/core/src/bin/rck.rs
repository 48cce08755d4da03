use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(rck_core::cli::run(std::env::args_os()))
}
