//! Folding a `key = value` config file and `LAMOPT_SEED` into the argument
//! list before clap sees it, so every source goes through the same parser.
//! Precedence is command line, then file, then environment, then defaults.

use std::fs;
use std::path::Path;

use clap::Command;

pub const SEED_ENV: &str = "LAMOPT_SEED";

/// Parsed `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| format!("config line {}: expected key = value", n + 1))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", n + 1));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

fn given_on_command_line(args: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("{flag}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Value of `--config` anywhere in `args`.
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

/// `args` with config-file and environment values appended for every flag
/// the command line leaves unset. Errors are usage errors.
pub fn expand_args(args: Vec<String>, cli: &Command, env_seed: Option<String>) -> Result<Vec<String>, String> {
    let Some(sub) = args.iter().skip(1).find_map(|a| cli.find_subcommand(a)) else {
        return Ok(args);
    };
    let mut extra: Vec<String> = Vec::new();
    let mut from_file: Vec<String> = Vec::new();

    if let Some(path) = config_path(&args) {
        let text = fs::read_to_string(Path::new(&path)).map_err(|e| format!("cannot read config {path}: {e}"))?;
        for (key, value) in parse_config(&text)? {
            if key == "config" {
                return Err("config files cannot include other config files".into());
            }
            let arg = sub
                .get_arguments()
                .find(|a| a.get_long() == Some(key.as_str()))
                .ok_or_else(|| format!("config key '{key}' is not a flag of '{}'", sub.get_name()))?;
            from_file.push(key.clone());
            if given_on_command_line(&args, &key) {
                continue;
            }
            if arg.get_action().takes_values() {
                let repeatable = matches!(arg.get_action(), clap::ArgAction::Append);
                let values: Vec<&str> =
                    if repeatable { value.split(',').map(str::trim).collect() } else { vec![value.as_str()] };
                for v in values {
                    extra.push(format!("--{key}"));
                    extra.push(v.to_string());
                }
            } else {
                match value.as_str() {
                    "true" => extra.push(format!("--{key}")),
                    "false" => {}
                    other => return Err(format!("config key '{key}' expects true or false, got '{other}'")),
                }
            }
        }
    }

    let has_seed = sub.get_arguments().any(|a| a.get_long() == Some("seed"));
    if let Some(seed) = env_seed.filter(|_| has_seed) {
        if !given_on_command_line(&args, "seed") && !from_file.iter().any(|k| k == "seed") {
            seed.trim().parse::<u64>().map_err(|_| format!("{SEED_ENV} must be an unsigned integer, got '{seed}'"))?;
            extra.push("--seed".into());
            extra.push(seed.trim().to_string());
        }
    }

    let mut out = args;
    out.extend(extra);
    Ok(out)
}
