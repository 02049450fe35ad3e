use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match wsiprep_cli::parse_and_validate(std::env::args_os()) {
        Ok(cmd) => wsiprep_cli::execute(&cmd),
        Err(e) => {
            e.print();
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
