//! Layered flag resolution: built-in defaults < config file < command line.
//!
//! Config values are turned into ordinary flags and appended to the command
//! line, so they go through the same parsing and validation as typed flags.
//! Flags given on the command line win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, Command, CommandFactory};

use crate::args::Cli;
use crate::CliError;

/// The command line with config-file flags merged in.
pub fn layered_argv(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let cmd = Cli::command();
    let Ok(pre) = cmd.clone().ignore_errors(true).try_get_matches_from(&argv) else {
        return Ok(argv);
    };
    let (Some(path), Some((sub_name, _))) = (pre.get_one::<PathBuf>("config").cloned(), pre.subcommand()) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let sub = cmd.find_subcommand(sub_name).expect("parsed subcommand exists");
    let subcommands: Vec<&str> = cmd.get_subcommands().map(Command::get_name).collect();

    let mut entries = Vec::new();
    for (key, value) in &table {
        match value {
            toml::Value::Table(t) if key == sub_name => entries.extend(t.iter()),
            toml::Value::Table(_) if subcommands.contains(&key.as_str()) => {}
            _ => entries.push((key, value)),
        }
    }

    let typed: Vec<String> = argv.iter().filter_map(|a| a.to_str().map(str::to_owned)).collect();
    let mut extra = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err(CliError::Usage("a config file cannot name another config file".into()));
        }
        let arg = find_arg(sub, &cmd, key)
            .ok_or_else(|| CliError::Usage(format!("config key `{key}` is not a flag of `{sub_name}`")))?;
        let flag = format!("--{key}");
        if typed.iter().any(|t| *t == flag || t.starts_with(&format!("{flag}="))) {
            continue;
        }
        extra.extend(tokens(&flag, arg, value).map_err(|e| CliError::Usage(format!("config key `{key}`: {e}")))?);
    }
    let mut out = argv;
    out.extend(extra.into_iter().map(OsString::from));
    Ok(out)
}

fn find_arg<'a>(sub: &'a Command, root: &'a Command, key: &str) -> Option<&'a Arg> {
    sub.get_arguments()
        .chain(root.get_arguments().filter(|a| a.is_global_set()))
        .find(|a| a.get_long() == Some(key))
}

fn tokens(flag: &str, arg: &Arg, value: &toml::Value) -> Result<Vec<String>, String> {
    if !arg.get_action().takes_values() {
        return match value {
            toml::Value::Boolean(true) => Ok(vec![flag.to_owned()]),
            toml::Value::Boolean(false) => Ok(vec![]),
            _ => Err("expected true or false".into()),
        };
    }
    let items = match value {
        toml::Value::Array(items) => items.iter().collect(),
        v => vec![v],
    };
    let mut out = Vec::new();
    for v in items {
        let text = match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            _ => return Err("expected a scalar or a list of scalars".into()),
        };
        out.push(format!("{flag}={text}"));
    }
    Ok(out)
}
