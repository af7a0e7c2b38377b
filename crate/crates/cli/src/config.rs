//! `key = value` configuration files, merged underneath explicit flags.
//!
//! Keys are long flag names without the leading dashes (`clip-lo` and
//! `clip_lo` are equivalent). Boolean switches take `true` or `false`. Blank
//! lines and lines starting with `#` are ignored.

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, Command};
use snic_core::SnicError;

/// Finds the value of `--config` in raw arguments (after the subcommand name).
pub fn find_config(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(2);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Translates a config file into flags of `sub`, validating every key.
pub fn config_args(path: &Path, sub: &Command) -> Result<Vec<OsString>, SnicError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SnicError::Input(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{}:{}", path.display(), lineno + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| SnicError::Input(format!("{}: expected `key = value`", at())))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .filter(|_| key != "config" && key != "help")
            .ok_or_else(|| SnicError::Input(format!("{}: unknown key `{key}` for `{}`", at(), sub.get_name())))?;
        match arg.get_action() {
            ArgAction::SetTrue => match value {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                other => return Err(SnicError::Input(format!("{}: `{key}` takes true or false, not `{other}`", at()))),
            },
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}
