//! Command-line driver for the `rnpm` simulator: resolves flags, config
//! files and figure presets, runs the requested simulation and writes
//! `series.csv`, `events.csv` and `summary.json`.

pub mod commands;
pub mod config;
pub mod output;

use clap::error::ErrorKind;
use clap::Parser;

use commands::Failure;
use config::{expand_config, validate_config, Cli, CommandKind, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

fn report_invalid(errors: &[(String, String)]) -> i32 {
    for (field, reason) in errors {
        eprintln!("error: {field}: {reason}");
    }
    EXIT_INVALID
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run(args: Vec<String>) -> i32 {
    let args = match expand_config(&args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
            let _ = e.print();
            return code;
        }
    };
    let (kind, flags) = cli.command.split();
    let cfg = RunConfig::resolve(kind, &flags);
    let errors = validate_config(&cfg);
    if !errors.is_empty() {
        return report_invalid(&errors);
    }
    if let Some(n) = cfg.threads {
        // only fails when a pool already exists, which the first call rules out
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let dir = cfg.out.clone();
    let result = match kind {
        CommandKind::Me => commands::master_equation(&cfg, &dir),
        CommandKind::Traj => commands::trajectory(&cfg, &dir),
        CommandKind::Ensemble => commands::ensemble(&cfg, &dir),
        CommandKind::Protocol => {
            if cfg.qubits() != 2 {
                return report_invalid(&[("qubits".into(), "the protocol needs two qubits".into())]);
            }
            commands::protocol(&cfg, &dir)
        }
        CommandKind::Figure => commands::figure(&cfg, &dir),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(errors)) => report_invalid(&errors),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}
