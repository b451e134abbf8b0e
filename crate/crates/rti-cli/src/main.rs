use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::init();
    let argv: Vec<String> = std::env::args().collect();
    ExitCode::from(rti_cli::run(&argv))
}
