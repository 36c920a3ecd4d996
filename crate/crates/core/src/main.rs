mod cli;

use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RELFUSE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let args: Vec<std::ffi::OsString> = std::env::args_os().collect();
    ExitCode::from(cli::run(args))
}
