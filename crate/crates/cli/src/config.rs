//! Flat `key = value` config files.
//!
//! Each entry becomes the flag `--key value` placed directly after the
//! subcommand, so anything given on the command line wins. Booleans map to a
//! bare flag when true and are dropped when false. `#` starts a comment.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key = value, got '{line}'", i + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn entries_to_args(entries: &[(String, String)]) -> Vec<String> {
    let mut args = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => args.push(format!("--{k}")),
            "false" => {}
            _ => {
                args.push(format!("--{k}"));
                args.push(v.clone());
            }
        }
    }
    args
}

/// Removes `--config <file>` from `argv` and splices the file's entries in
/// after the first argument naming one of `subcommands`.
pub fn expand_config_args(argv: Vec<String>, subcommands: &[&str]) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config_path = None;
    let mut it = argv.into_iter();
    if let Some(bin) = it.next() {
        rest.push(bin);
    }
    while let Some(a) = it.next() {
        if a == "--config" {
            config_path = Some(it.next().context("--config needs a file path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config_path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config file {path}"))?;
    let injected =
        entries_to_args(&parse_config(&text).with_context(|| format!("in config file {path}"))?);
    let Some(sub) = rest
        .iter()
        .skip(1)
        .position(|a| subcommands.contains(&a.as_str()))
        .map(|p| p + 1)
    else {
        bail!("--config needs a subcommand");
    };
    let mut out: Vec<String> = rest[..=sub].to_vec();
    out.extend(injected);
    out.extend(rest[sub + 1..].iter().cloned());
    Ok(out)
}
