//! `key = value` run files.
//!
//! Each key is a long flag of the chosen subcommand, written with dashes or
//! underscores. File entries are spliced into the argument list ahead of
//! the user's own flags, so anything given on the command line wins and
//! unknown keys fail exactly like unknown flags.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

/// Global options that take a value and may precede the subcommand.
const GLOBAL_VALUED: [&str; 2] = ["--threads", "--config"];

#[derive(Debug)]
pub struct ConfigError(pub String);

pub fn parse(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key.starts_with('-') {
            return Err(ConfigError(format!("line {}: bad key {:?}", n + 1, k.trim())));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Finds `--config PATH` / `--config=PATH` anywhere in `args`.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Position of the subcommand name in `args`.
fn subcommand_index(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if GLOBAL_VALUED.contains(&s.as_ref()) {
            i += 2;
        } else if s.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

/// Returns `args` with the config file's entries inserted after the
/// subcommand name.
pub fn splice(args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path))
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", Path::new(&path).display())))?;
    let entries = parse(&text)?;
    let Some(at) = subcommand_index(&args) else {
        return Ok(args);
    };
    let mut out: Vec<OsString> = args[..=at].to_vec();
    for (k, v) in entries {
        out.push(format!("--{k}").into());
        out.push(v.into());
    }
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}
