//! `--config` files: flat TOML tables whose keys are long flag names.
//!
//! Config values are appended to the argument list unless the same flag is
//! already present on the command line, so flags override the file and the
//! file overrides built-in defaults.

use std::ffi::OsString;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {msg}")]
    Parse { path: String, msg: String },
}

/// Flag name to value, sorted by key. `None` marks a bare boolean flag.
pub fn parse_config(text: &str, path: &str) -> Result<Vec<(String, Option<String>)>, ConfigError> {
    let err = |msg: String| ConfigError::Parse {
        path: path.to_string(),
        msg,
    };
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| err(e.message().to_string()))?;
    let mut out = Vec::with_capacity(table.len());
    for (key, value) in table {
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err(err("a config file cannot name another config file".into()));
        }
        let v = match value {
            toml::Value::String(s) => Some(s),
            toml::Value::Integer(i) => Some(i.to_string()),
            toml::Value::Float(f) => Some(f.to_string()),
            toml::Value::Boolean(true) => None,
            toml::Value::Boolean(false) => continue,
            _ => return Err(err(format!("key `{key}` must be a string, number or boolean"))),
        };
        out.push((flag, v));
    }
    Ok(out)
}

/// Location of `--config PATH` or `--config=PATH` in `args`, if any.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

fn has_flag(args: &[OsString], flag: &str) -> bool {
    let long = format!("--{flag}");
    let prefix = format!("--{flag}=");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == long || s.starts_with(&prefix)
    })
}

/// `args` with config-file entries appended for flags not already given.
pub fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let shown = Path::new(&path).display().to_string();
    let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut merged = args.clone();
    for (flag, value) in parse_config(&text, &shown)? {
        if has_flag(&args, &flag) {
            continue;
        }
        match value {
            Some(v) => merged.push(format!("--{flag}={v}").into()),
            None => merged.push(format!("--{flag}").into()),
        }
    }
    Ok(merged)
}
