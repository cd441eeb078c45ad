//! `key=value` config files. Keys are long flag names of the subcommand being
//! run; flags given on the command line win over the file.

use std::path::Path;

use anyhow::{bail, Context};
use clap::parser::ValueSource;
use clap::{ArgMatches, Command};

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!(crate::UsageError(format!("config line {}: expected key=value, got `{line}`", n + 1)));
        };
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text)
}

/// The innermost subcommand and its matches.
fn leaf<'a>(mut cmd: &'a Command, mut m: &'a ArgMatches) -> (&'a Command, &'a ArgMatches) {
    while let Some((name, sub)) = m.subcommand() {
        cmd = cmd.find_subcommand(name).expect("matched subcommand exists");
        m = sub;
    }
    (cmd, m)
}

/// Extra argv tokens for every config entry not already set on the command
/// line. They are appended at the end, where they bind to the innermost
/// subcommand.
pub fn extra_args(root: &Command, matches: &ArgMatches, entries: &[(String, String)]) -> anyhow::Result<Vec<String>> {
    let (cmd, m) = leaf(root, matches);
    let mut out = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            bail!(crate::UsageError("a config file cannot name another config file".into()));
        }
        let Some(arg) = cmd.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            bail!(crate::UsageError(format!("unknown config key `{key}` for `{}`", cmd.get_name())));
        };
        if m.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        if arg.get_action().takes_values() {
            out.push(format!("--{key}={value}"));
        } else {
            match value.as_str() {
                "true" | "yes" | "1" => out.push(format!("--{key}")),
                "false" | "no" | "0" => {}
                _ => bail!(crate::UsageError(format!("config key `{key}` takes true or false"))),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let kv = parse("# hello\ntrials = 10\n\nseq2_insert_prob=0.5 # trailing\n").unwrap();
        assert_eq!(kv, vec![("trials".into(), "10".into()), ("seq2-insert-prob".into(), "0.5".into())]);
        assert!(parse("nonsense").is_err());
    }
}
