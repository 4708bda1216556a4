use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;

use boundaryforge_cli::{exit_code, init_workers, run, tune_allocator, Cli};
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    tune_allocator();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    if let Err(e) = init_workers(cli.workers) {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e) as u8);
    }
    // a panic is a violated invariant
    match panic::catch_unwind(AssertUnwindSafe(|| run(&cli.command))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}
