mod args;
mod commands;

use args::{Cli, Command};
use clap::Parser;
use std::ffi::OsString;
use std::process::ExitCode;
use survey_hazard::config::KeyValueConfig;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Pulls `--config FILE` out of argv and splices the file's entries in as flags
/// directly after the subcommand, so flags given on the command line win.
fn merge_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            config = it.next();
        } else if let Some(path) = s.strip_prefix("--config=") {
            config = Some(OsString::from(path));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let path = std::path::PathBuf::from(path);
    let text = std::fs::read_to_string(&path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    let cfg = KeyValueConfig::parse(&text, &path.display().to_string())?;
    let mut injected = Vec::new();
    for (key, value) in cfg.entries() {
        let flag = format!("--{}", key.replace('_', "-"));
        match value.as_str() {
            "true" => injected.push(OsString::from(flag)),
            "false" => {}
            _ => {
                injected.push(OsString::from(flag));
                injected.push(OsString::from(value));
            }
        }
    }
    // First token after the program name that is not a global option is the subcommand.
    let mut i = 1;
    while i < rest.len() {
        let s = rest[i].to_string_lossy();
        if s == "--threads" {
            i += 2;
        } else if s.starts_with('-') {
            i += 1;
        } else {
            break;
        }
    }
    let at = (i + 1).min(rest.len());
    rest.splice(at..at, injected);
    Ok(rest)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<survey_hazard::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Expand(a) => commands::expand(a),
        Command::Collapse(a) => commands::collapse(a),
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Importance(a) => commands::importance(a),
        Command::CalibrateGt(a) => commands::calibrate_gt(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let argv = match merge_config(std::env::args_os().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
