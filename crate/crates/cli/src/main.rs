use std::process::ExitCode;

fn main() -> ExitCode {
    lqlab::cli::main_with_args(std::env::args_os())
}
