mod cli;

use std::process::ExitCode;

use clap::Parser;

use cli::{lib_exit_code, Cli, CliError};

// Training allocates large per-step buffers; the system allocator returns
// them to the OS each time and the page faults cost more than the math.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.exit_code();
        }
        if let Some(e) = cause.downcast_ref::<splatlab::Error>() {
            return lib_exit_code(e);
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
