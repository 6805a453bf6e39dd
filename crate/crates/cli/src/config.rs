//! `key = value` configuration files and the resolved-configuration record.
//!
//! A config file is turned into command-line flags placed before the user's
//! own flags. Every argument accepts repeated occurrences with the last one
//! winning, so explicit flags override the file and the file overrides
//! built-in defaults.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use clap::{ArgMatches, Command};

use crate::commands::CliError;

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut found = None;
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            found = iter.next().cloned();
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(OsString::from(v));
        }
    }
    found
}

/// Inserts the flags described by the `--config` file (if any) right after
/// the subcommand name.
pub fn merge_config_file(command: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(name) = argv.get(1).map(|s| s.to_string_lossy().into_owned()) else {
        return Ok(argv);
    };
    let Some(sub) = command.find_subcommand(&name) else {
        return Ok(argv);
    };
    let Some(path) = config_path(&argv[2..]) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let injected = config_flags(sub, &text).map_err(|msg| CliError::Config(format!("{}: {msg}", path.display())))?;
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

fn config_flags(sub: &Command, text: &str) -> Result<Vec<OsString>, String> {
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(format!("line {}: config files cannot include other config files", n + 1));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| format!("line {}: unknown key `{key}` for `{}`", n + 1, sub.get_name()))?;
        let flag = OsString::from(format!("--{key}"));
        if arg.get_action().takes_values() {
            let multi = arg.get_num_args().is_some_and(|r| r.max_values() > 1);
            flags.push(flag);
            if multi {
                flags.extend(value.split_whitespace().map(OsString::from));
            } else {
                flags.push(OsString::from(value));
            }
        } else {
            match value {
                "true" => flags.push(flag),
                "false" => {}
                other => return Err(format!("line {}: `{key}` expects true or false, got `{other}`", n + 1)),
            }
        }
    }
    Ok(flags)
}

/// Every argument of subcommand `name` with its effective value, in a form
/// that can be fed back through `--config`.
pub fn resolved_config(command: &Command, name: &str, matches: &ArgMatches) -> String {
    let mut out = format!("# rbm-anneal {name}\n");
    let Some(sub) = command.find_subcommand(name) else {
        return out;
    };
    for arg in sub.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if matches!(long, "config" | "help" | "version") {
            continue;
        }
        let raw = matches.try_get_raw(arg.get_id().as_str()).ok().flatten();
        match raw {
            Some(values) => {
                let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
                writeln!(out, "{long} = {}", joined.join(" ")).unwrap();
            }
            None if long == "out-dir" => {
                writeln!(out, "{long} = {}", crate::default_out_dir().display()).unwrap();
            }
            None => {
                writeln!(out, "# {long} is unset").unwrap();
            }
        }
    }
    out
}
