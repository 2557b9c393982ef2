//! Expands a `--config` JSON file into command-line flags.
//!
//! Top-level scalar keys set global flags (`threads`, `seed`, `counter`).
//! A top-level object keyed by a subcommand name sets that subcommand's flags.
//! Keys may use `_` or `-`. A flag already present on the command line is
//! never taken from the file.

use std::path::PathBuf;

use serde_json::Value;

use crate::args::SUBCOMMANDS;
use crate::error::{CliError, Context};

const GLOBAL_KEYS: [&str; 3] = ["threads", "seed", "counter"];
const GLOBAL_VALUE_FLAGS: [&str; 4] = ["--threads", "--config", "--seed", "--counter"];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

/// Returns the effective argument vector and the config file, if any.
pub fn expand(args: Vec<String>) -> Result<(Vec<String>, Option<ConfigFile>), CliError> {
    let Some(path) = find_config(&args) else {
        return Ok((args, None));
    };
    let bytes = std::fs::read(&path).cat("config")?;
    let value: Value = serde_json::from_slice(&bytes).cat("config")?;
    let Value::Object(map) = value else {
        return Err(CliError::new("config", "config file must hold a JSON object"));
    };
    let Some(sub_idx) = subcommand_index(&args) else {
        return Ok((args, Some(ConfigFile { path, bytes })));
    };
    let sub = args[sub_idx].clone();

    let mut extra = Vec::new();
    for (key, v) in &map {
        match v {
            Value::Object(section) => {
                if !SUBCOMMANDS.contains(&key.as_str()) {
                    return Err(CliError::new("config", format!("unknown subcommand section `{key}`")));
                }
                if *key == sub {
                    for (k, v) in section {
                        push_flag(&mut extra, &args, k, v)?;
                    }
                }
            }
            _ if GLOBAL_KEYS.contains(&key.replace('_', "-").as_str()) => push_flag(&mut extra, &args, key, v)?,
            _ => {
                return Err(CliError::new(
                    "config",
                    format!("unknown top-level key `{key}`; subcommand flags belong in a section named after the subcommand"),
                ))
            }
        }
    }
    let mut out = args;
    out.splice(sub_idx + 1..sub_idx + 1, extra);
    Ok((out, Some(ConfigFile { path, bytes })))
}

fn find_config(args: &[String]) -> Option<PathBuf> {
    let mut found = None;
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--" {
            break;
        }
        if let Some(v) = args[i].strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        } else if args[i] == "--config" {
            found = args.get(i + 1).map(PathBuf::from);
            i += 1;
        }
        i += 1;
    }
    found
}

fn subcommand_index(args: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let t = args[i].as_str();
        if GLOBAL_VALUE_FLAGS.contains(&t) {
            i += 2;
        } else if t.starts_with('-') {
            i += 1;
        } else {
            return SUBCOMMANDS.contains(&t).then_some(i);
        }
    }
    None
}

fn user_supplied(args: &[String], flag: &str) -> bool {
    let with_eq = format!("{flag}=");
    args.iter().any(|a| a == flag || a.starts_with(&with_eq))
}

fn scalar(v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(CliError::new("config", format!("unsupported config value {v}"))),
    }
}

fn push_flag(out: &mut Vec<String>, args: &[String], key: &str, v: &Value) -> Result<(), CliError> {
    let flag = format!("--{}", key.replace('_', "-"));
    if user_supplied(args, &flag) {
        return Ok(());
    }
    match v {
        Value::Null | Value::Bool(false) => {}
        Value::Bool(true) => out.push(flag),
        Value::Array(items) => {
            if !items.is_empty() {
                out.push(flag);
                for item in items {
                    out.push(scalar(item)?);
                }
            }
        }
        other => {
            out.push(flag);
            out.push(scalar(other)?);
        }
    }
    Ok(())
}
