//! `heatflow`: batch runner for the heat-flow distance and metric reports.
//!
//! Every subcommand writes CSV tables plus `summary.json` into `--out`.
//! Exit status is 0 when every check passes, 1 when one fails and 2 on
//! invalid input, in which case nothing is written.

mod args;
mod commands;
mod output;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};
use output::{Summary, Tolerances};

/// A problem with the request itself: bad flags, bad files, sizes over the
/// caps or times the grids cannot resolve.
#[derive(Debug)]
pub struct InputError(pub String);

impl From<heatflow_core::Error> for InputError {
    fn from(e: heatflow_core::Error) -> Self {
        Self(e.to_string())
    }
}

#[derive(Serialize)]
struct Config<'a, A: Serialize> {
    #[serde(flatten)]
    args: &'a A,
    tolerances: &'a Tolerances,
}

fn dispatch(command: &Command, start: Instant) -> Result<bool, InputError> {
    macro_rules! go {
        ($args:expr, $run:path) => {{
            let tol = Tolerances::parse(&$args.common.tolerances)?;
            let report = $run($args, &tol)?;
            let config = Config {
                args: $args,
                tolerances: &tol,
            };
            finish(command.name(), &$args.common.out, config, report, start)
        }};
    }
    match command {
        Command::Flow(a) => go!(a, commands::flow),
        Command::Tangency(a) => go!(a, commands::tangency),
        Command::Contraction(a) => go!(a, commands::contraction),
        Command::Continuity(a) => go!(a, commands::continuity),
        Command::Refine(a) => go!(a, commands::refine),
        Command::Selftest(a) => go!(a, commands::selftest),
    }
}

fn finish<C: Serialize>(
    name: &str,
    dir: &std::path::Path,
    config: C,
    mut report: commands::Report,
    start: Instant,
) -> Result<bool, InputError> {
    let summary = Summary {
        command: name,
        config,
        checks: &report.checks,
        files: report.outputs.names(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| InputError(e.to_string()))?;
    report.outputs.add("summary.json", json + "\n");
    report
        .outputs
        .write_all(dir)
        .map_err(|e| InputError(format!("{}: {e}", dir.display())))?;
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.pass).collect();
    for c in &failed {
        println!("{c}");
    }
    println!("{name}: {} checks, {} failed", report.checks.len(), failed.len());
    Ok(failed.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command, Instant::now()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(InputError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
