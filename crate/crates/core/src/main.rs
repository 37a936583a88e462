use std::process::ExitCode;

fn main() -> ExitCode {
    coxreg::cli::main_with(std::env::args_os())
}
