use std::process::ExitCode;

fn main() -> ExitCode {
    match wsphen_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
