//! `mane <command> --config <path> [--set key=value]... [--out <path>]`
//!
//! Exit codes: 0 pass, 1 fail (checks ran, criteria unmet), 2 config error,
//! 3 numeric error.

use std::process::ExitCode;

use mane_cli::{run_command, CliError, Config};

const USAGE: &str = "usage: mane <integrate|critical|stability|sol-claim> \
--config <path> [--set key=value]... [--out <path>]";

fn parse_and_run() -> Result<(String, bool, Option<String>), CliError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        return Err(CliError::Config(USAGE.to_string()));
    }
    let command = args[0].clone();
    let mut config_path = None;
    let mut overrides = Vec::new();
    let mut out_path = None;
    let mut i = 1;
    while i < args.len() {
        match args[i].as_str() {
            "--config" => {
                i += 1;
                config_path = Some(
                    args.get(i)
                        .ok_or_else(|| CliError::Config("--config needs a path".into()))?
                        .clone(),
                );
            }
            "--set" => {
                i += 1;
                overrides.push(
                    args.get(i)
                        .ok_or_else(|| CliError::Config("--set needs key=value".into()))?
                        .clone(),
                );
            }
            "--out" => {
                i += 1;
                out_path = Some(
                    args.get(i)
                        .ok_or_else(|| CliError::Config("--out needs a path".into()))?
                        .clone(),
                );
            }
            other => {
                return Err(CliError::Config(format!("unknown argument {other}; {USAGE}")));
            }
        }
        i += 1;
    }
    let mut cfg = match config_path {
        Some(p) => Config::load(&p).map_err(CliError::from)?,
        None => Config::default(),
    };
    for kv in &overrides {
        cfg.set_override(kv).map_err(CliError::from)?;
    }
    let (json, pass) = run_command(&command, &cfg)?;
    Ok((json, pass, out_path))
}

fn main() -> ExitCode {
    match parse_and_run() {
        Ok((json, pass, out_path)) => {
            match out_path {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, &json) {
                        eprintln!("failed to write {path}: {e}");
                        return ExitCode::from(3);
                    }
                }
                None => print!("{json}"),
            }
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("numeric error: {msg}");
            ExitCode::from(3)
        }
    }
}
