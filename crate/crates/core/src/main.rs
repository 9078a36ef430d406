use std::process::ExitCode;

fn main() -> ExitCode {
    tfrec::cli::main()
}
