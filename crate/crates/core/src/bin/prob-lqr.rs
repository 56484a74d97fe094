use std::process::ExitCode;

fn main() -> ExitCode {
    prob_lqr::cli::main_with_args(std::env::args_os())
}
