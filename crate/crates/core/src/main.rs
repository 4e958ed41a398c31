use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match opencoding::cli::run_from(std::env::args_os()) {
        Err(usage) => {
            let code = if usage.use_stderr() { 2 } else { 0 };
            let _ = usage.print();
            ExitCode::from(code)
        }
        Ok(Err(e)) => {
            eprintln!("{}", e.to_line());
            ExitCode::FAILURE
        }
        Ok(Ok(())) => ExitCode::SUCCESS,
    }
}
