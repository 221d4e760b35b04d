use std::process::ExitCode;

fn main() -> ExitCode {
    chatguard::cli::main()
}
