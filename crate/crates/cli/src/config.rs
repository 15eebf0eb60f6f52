//! `--config FILE`: flat `key = value` lines merged under the command line.

use crate::error::{CliError, CliResult};
use clap::Command;
use std::ffi::OsString;

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses the file format: `#` starts a comment line, blank lines are skipped,
/// keys may repeat (the last one wins).
pub fn parse(text: &str) -> CliResult<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::usage(format!("config line {}: expected key=value, got `{line}`", i + 1)));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(CliError::usage(format!("config line {}: empty key", i + 1)));
        }
        out.push(Entry { line: i + 1, key, value: v.trim().to_string() });
    }
    Ok(out)
}

/// Finds `--config` in `args` (after the subcommand name at index 1) and
/// splices the file's entries in as flags right after the subcommand. Keys
/// also given as flags on the command line are dropped from the file.
pub fn expand(args: Vec<OsString>, root: &Command) -> CliResult<Vec<OsString>> {
    let Some(sub_name) = args.get(1).and_then(|s| s.to_str()) else {
        return Ok(args);
    };
    let Some(sub) = root.find_subcommand(sub_name) else {
        return Ok(args);
    };
    let mut path = None;
    for (i, a) in args.iter().enumerate().skip(2) {
        let s = a.to_string_lossy();
        if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if s == "--config" {
            match args.get(i + 1) {
                Some(p) => path = Some(p.to_string_lossy().into_owned()),
                None => return Ok(args),
            }
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::new("io", format!("{path}: {e}")))?;
    let given: Vec<String> = args[2..]
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut extra: Vec<OsString> = Vec::new();
    for e in parse(&text)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(e.key.as_str()))
            .filter(|a| a.get_long() != Some("config"))
            .ok_or_else(|| {
                CliError::usage(format!("config line {}: unknown key `{}` for `{sub_name}`", e.line, e.key))
            })?;
        if given.contains(&e.key) {
            continue;
        }
        let flag = format!("--{}", e.key);
        if arg.get_action().takes_values() {
            let multi = arg.get_num_args().is_some_and(|n| n.max_values() > 1);
            extra.push(flag.into());
            if multi {
                extra.extend(e.value.split_whitespace().map(OsString::from));
            } else {
                extra.push(e.value.into());
            }
        } else {
            match e.value.as_str() {
                "true" => extra.push(flag.into()),
                "false" => {}
                v => {
                    return Err(CliError::usage(format!(
                        "config line {}: `{}` is a switch, expected true or false, got `{v}`",
                        e.line, e.key
                    )))
                }
            }
        }
    }
    let mut out = args[..2].to_vec();
    out.extend(extra);
    out.extend(args[2..].iter().cloned());
    Ok(out)
}
