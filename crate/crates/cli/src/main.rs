//! `amodal-kit`: evaluation, tracking, augmentation and expander training
//! for amodal tracking datasets.
//!
//! Exit codes: 0 on success, 2 on bad input or configuration, 3 when an
//! internal invariant breaks. Failures print a JSON error object on stderr.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use amodal_core::Error;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invariant(_) => 3,
        _ => 2,
    }
}

fn report_error(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|info| {
        report_error("internal", &info.to_string());
        std::process::exit(3);
    }));

    let cli = args::Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
    {
        report_error("invalid_config", &e.to_string());
        return ExitCode::from(2);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::from(exit_code(&e))
        }
    }
}
