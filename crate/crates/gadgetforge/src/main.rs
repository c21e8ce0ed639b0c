use std::process::ExitCode;

fn main() -> ExitCode {
    gadgetforge::cli::run()
}
