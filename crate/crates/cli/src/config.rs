//! Flat `key=value` configuration files merged beneath command-line flags.

use std::fs;
use std::path::Path;

use clap::{ArgAction, Command};

#[derive(Debug)]
pub enum ConfigError {
    Usage(String),
    Io(String),
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
/// Keys may use `-` or `_` interchangeably.
pub fn parse(path: &Path, text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(ConfigError::Usage(format!("{}:{}: empty key", path.display(), i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Position and value of `--config` in `args`, if present.
fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn flag_given(args: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Appends config-file settings as flags for every key the command line did
/// not already set. Keys unknown to the selected subcommand are rejected.
pub fn merge(cmd: &Command, args: Vec<String>) -> Result<Vec<String>, ConfigError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(sub) = args.iter().skip(1).find_map(|a| cmd.find_subcommand(a)) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| ConfigError::Io(format!("{path}: {e}")))?;
    let mut merged = args.clone();
    for (key, value) in parse(Path::new(&path), &text)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| ConfigError::Usage(format!("{path}: unknown key '{key}' for '{}'", sub.get_name())))?;
        if flag_given(&args, &key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => merged.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                _ => return Err(ConfigError::Usage(format!("{path}: '{key}' expects true or false"))),
            },
            ArgAction::Append => {
                for v in value.split(',').filter(|v| !v.trim().is_empty()) {
                    merged.push(format!("--{key}={}", v.trim()));
                }
            }
            _ => merged.push(format!("--{key}={value}")),
        }
    }
    Ok(merged)
}
